#pragma once

#include <cmath>
#include <vector>

#include "dsi/core.hpp"

namespace dsi::rae {

/// Weights of one LSTM layer, shared by every time step. The four gate
/// matrices are stacked row-wise in the order forget, input, output,
/// candidate; each acts on the concatenation [h_{t-1}; x_t].
struct LstmLayerWeights {
  Index hidden = 0;
  Index input = 0;
  Matrix W;  // 4 hidden x (hidden + input)
  Vector b;  // 4 hidden

  static LstmLayerWeights zeros(Index hidden, Index input) {
    return {hidden, input, Matrix::Zero(4 * hidden, hidden + input), Vector::Zero(4 * hidden)};
  }

  auto W_f() { return W.middleRows(0, hidden); }
  auto W_i() { return W.middleRows(hidden, hidden); }
  auto W_o() { return W.middleRows(2 * hidden, hidden); }
  auto W_x() { return W.middleRows(3 * hidden, hidden); }
  auto b_f() { return b.segment(0, hidden); }
  auto b_i() { return b.segment(hidden, hidden); }
  auto b_o() { return b.segment(2 * hidden, hidden); }
  auto b_c() { return b.segment(3 * hidden, hidden); }

  auto recurrent() const { return W.leftCols(hidden); }
  auto feed() const { return W.rightCols(input); }

  void validate() const {
    if (hidden < 1 || input < 1) throw SchemaError("LSTM layer needs positive sizes");
    if (W.rows() != 4 * hidden || W.cols() != hidden + input || b.size() != 4 * hidden)
      throw SchemaError("LSTM weight shapes do not match declared sizes");
    if (!W.allFinite() || !b.allFinite()) throw NumericalError("non-finite LSTM weights");
  }
};

namespace detail {

inline Matrix sigmoid(const Matrix& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

}  // namespace detail

/// Intermediates of one cell evaluation over a batch (columns = members).
struct LstmCellCache {
  Matrix gates;   // 4H x B: sigmoid(f), sigmoid(i), sigmoid(o), tanh(candidate)
  Matrix c;       // H x B
  Matrix tanh_c;  // H x B
};

struct LstmCellOutput {
  Matrix h;
  Matrix c;
  LstmCellCache cache;
};

/// Gate activations from pre-activations z = W [h_prev; x] + b.
inline LstmCellOutput lstm_cell_from_preactivation(Index hidden, Matrix z, const Matrix& c_prev) {
  LstmCellOutput out;
  auto& g = out.cache.gates;
  g = std::move(z);
  g.topRows(3 * hidden) = detail::sigmoid(g.topRows(3 * hidden));
  g.bottomRows(hidden) = g.bottomRows(hidden).array().tanh().matrix();
  out.c = g.middleRows(0, hidden).cwiseProduct(c_prev) +
          g.middleRows(hidden, hidden).cwiseProduct(g.middleRows(3 * hidden, hidden));
  out.cache.tanh_c = out.c.array().tanh().matrix();
  out.h = g.middleRows(2 * hidden, hidden).cwiseProduct(out.cache.tanh_c);
  out.cache.c = out.c;
  return out;
}

/// One LSTM step: f, i, o = sigma(W[h, x] + b), c~ = tanh(W_x[h, x] + b_c),
/// c = f*c_prev + i*c~, h = o*tanh(c). Accepts a batch of column vectors.
inline LstmCellOutput lstm_cell_forward(const LstmLayerWeights& w, const Matrix& x,
                                        const Matrix& h_prev, const Matrix& c_prev) {
  if (x.rows() != w.input || h_prev.rows() != w.hidden || c_prev.rows() != w.hidden ||
      h_prev.cols() != x.cols() || c_prev.cols() != x.cols())
    throw SchemaError("LSTM cell input shapes do not match the layer");
  Matrix z = w.recurrent() * h_prev + w.feed() * x;
  z.colwise() += w.b;
  return lstm_cell_from_preactivation(w.hidden, std::move(z), c_prev);
}

/// Forward intermediates of a whole sequence.
struct LstmSequenceCache {
  std::vector<Matrix> gates;
  std::vector<Matrix> c;
  std::vector<Matrix> tanh_c;
  std::vector<Matrix> h;
};

/// Runs the layer over n_steps with zero initial state. Input at step t is
/// inputs[t], or inputs[0] at every step when `repeated` is set (the decoder's
/// RepeatVector input).
inline LstmSequenceCache lstm_sequence_forward(const LstmLayerWeights& w, const std::vector<Matrix>& inputs,
                                               Index n_steps, bool repeated) {
  const Index H = w.hidden;
  const Index B = inputs.front().cols();
  LstmSequenceCache cache;
  cache.gates.reserve(static_cast<std::size_t>(n_steps));
  cache.c.reserve(static_cast<std::size_t>(n_steps));
  cache.tanh_c.reserve(static_cast<std::size_t>(n_steps));
  cache.h.reserve(static_cast<std::size_t>(n_steps));

  Matrix constant_part;
  if (repeated) {
    constant_part = w.feed() * inputs.front();
    constant_part.colwise() += w.b;
  }
  Matrix h = Matrix::Zero(H, B), c = Matrix::Zero(H, B);
  for (Index t = 0; t < n_steps; ++t) {
    Matrix z;
    if (repeated) {
      z = constant_part;
    } else {
      z = w.feed() * inputs[static_cast<std::size_t>(t)];
      z.colwise() += w.b;
    }
    if (t > 0) z.noalias() += w.recurrent() * h;
    auto step = lstm_cell_from_preactivation(H, std::move(z), c);
    h = step.h;
    c = step.c;
    cache.gates.push_back(std::move(step.cache.gates));
    cache.c.push_back(std::move(step.cache.c));
    cache.tanh_c.push_back(std::move(step.cache.tanh_c));
    cache.h.push_back(std::move(step.h));
  }
  return cache;
}

/// Backpropagation through time for one layer. `dh_out[t]` is the loss
/// gradient w.r.t. h_t from the layers above. Gradients are accumulated into
/// `grad`. Returns d loss / d input per step, or a single summed gradient for
/// a repeated input; empty when `want_input_grad` is false.
inline std::vector<Matrix> lstm_sequence_backward(const LstmLayerWeights& w, const LstmSequenceCache& cache,
                                                  const std::vector<Matrix>& inputs, bool repeated,
                                                  const std::vector<Matrix>& dh_out, LstmLayerWeights& grad,
                                                  bool want_input_grad) {
  const Index H = w.hidden;
  const auto T = static_cast<Index>(cache.h.size());
  const Index B = cache.h.front().cols();
  std::vector<Matrix> dx;
  if (want_input_grad) dx.resize(repeated ? 1 : static_cast<std::size_t>(T));

  Matrix dh_next = Matrix::Zero(H, B), dc_next = Matrix::Zero(H, B);
  Matrix dz(4 * H, B);
  Matrix dz_sum;
  if (repeated) dz_sum = Matrix::Zero(4 * H, B);
  auto dW_h = grad.W.leftCols(H);
  auto dW_x = grad.W.rightCols(w.input);

  for (Index t = T - 1; t >= 0; --t) {
    const auto ts = static_cast<std::size_t>(t);
    const Matrix& g = cache.gates[ts];
    const auto f = g.middleRows(0, H).array();
    const auto i = g.middleRows(H, H).array();
    const auto o = g.middleRows(2 * H, H).array();
    const auto cand = g.middleRows(3 * H, H).array();
    const auto tc = cache.tanh_c[ts].array();

    const Matrix dh = dh_out[ts] + dh_next;
    const Matrix dc = (dc_next.array() + dh.array() * o * (1.0 - tc.square())).matrix();
    if (t > 0) {
      dz.middleRows(0, H) = (dc.array() * cache.c[ts - 1].array() * f * (1.0 - f)).matrix();
    } else {
      dz.middleRows(0, H).setZero();
    }
    dz.middleRows(H, H) = (dc.array() * cand * i * (1.0 - i)).matrix();
    dz.middleRows(2 * H, H) = (dh.array() * tc * o * (1.0 - o)).matrix();
    dz.middleRows(3 * H, H) = (dc.array() * i * (1.0 - cand.square())).matrix();

    grad.b += dz.rowwise().sum();
    if (t > 0) {
      dW_h.noalias() += dz * cache.h[ts - 1].transpose();
      dh_next.noalias() = w.recurrent().transpose() * dz;
    }
    if (repeated) {
      dz_sum += dz;
    } else {
      dW_x.noalias() += dz * inputs[ts].transpose();
      if (want_input_grad) dx[ts].noalias() = w.feed().transpose() * dz;
    }
    dc_next = (dc.array() * f).matrix();
  }
  if (repeated) {
    dW_x.noalias() += dz_sum * inputs.front().transpose();
    if (want_input_grad) dx[0].noalias() = w.feed().transpose() * dz_sum;
  }
  return dx;
}

}  // namespace dsi::rae
