#pragma once

#include <array>
#include <concepts>
#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dsi/adam.hpp"
#include "dsi/core.hpp"
#include "dsi/io.hpp"
#include "dsi/parallel.hpp"
#include "dsi/rae/lstm.hpp"

namespace dsi::rae {

struct Architecture {
  Index n_qoi = 0;
  Index n_t = 0;
  Index n_hidden = 0;
  Index n_latent = 0;

  bool operator==(const Architecture&) const = default;
};

/// Per-quantity min-max bounds mapping physical values onto [-1, 1].
struct Normalization {
  Vector lo;
  Vector hi;
};

/// Encoder: one LSTM layer over the N_QoI-vector at each step, hidden states
/// of all steps flattened (time-major) into a linear dense layer giving xi.
/// Decoder: xi repeated at every step into three stacked LSTM layers, then a
/// tanh dense head per step.
struct RaeWeights {
  Architecture arch;
  LstmLayerWeights encoder;
  Matrix encoder_dense_W;  // n_latent x (n_hidden * n_t)
  Vector encoder_dense_b;
  std::array<LstmLayerWeights, 3> decoder;
  Matrix head_W;  // n_qoi x n_hidden
  Vector head_b;
  Normalization norm;

  static RaeWeights zeros(const Architecture& a) {
    if (a.n_qoi < 1 || a.n_t < 1 || a.n_hidden < 1 || a.n_latent < 1)
      throw ConfigError("RAE architecture sizes must be positive");
    RaeWeights w;
    w.arch = a;
    w.encoder = LstmLayerWeights::zeros(a.n_hidden, a.n_qoi);
    w.encoder_dense_W = Matrix::Zero(a.n_latent, a.n_hidden * a.n_t);
    w.encoder_dense_b = Vector::Zero(a.n_latent);
    w.decoder[0] = LstmLayerWeights::zeros(a.n_hidden, a.n_latent);
    w.decoder[1] = LstmLayerWeights::zeros(a.n_hidden, a.n_hidden);
    w.decoder[2] = LstmLayerWeights::zeros(a.n_hidden, a.n_hidden);
    w.head_W = Matrix::Zero(a.n_qoi, a.n_hidden);
    w.head_b = Vector::Zero(a.n_qoi);
    w.norm = {Vector::Constant(a.n_qoi, -1.0), Vector::Constant(a.n_qoi, 1.0)};
    return w;
  }

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer, biases included.
  static RaeWeights initialized(const Architecture& a, Rng& rng) {
    RaeWeights w = zeros(a);
    auto fill = [&](auto& block, Index fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (Index k = 0; k < block.size(); ++k) block.data()[k] = rng.uniform(-bound, bound);
    };
    fill(w.encoder.W, a.n_hidden + a.n_qoi);
    fill(w.encoder.b, a.n_hidden + a.n_qoi);
    fill(w.encoder_dense_W, a.n_hidden * a.n_t);
    fill(w.encoder_dense_b, a.n_hidden * a.n_t);
    for (auto& layer : w.decoder) {
      fill(layer.W, layer.hidden + layer.input);
      fill(layer.b, layer.hidden + layer.input);
    }
    fill(w.head_W, a.n_hidden);
    fill(w.head_b, a.n_hidden);
    return w;
  }

  /// Glorot-uniform input and dense kernels, orthogonal recurrent kernel per
  /// gate, zero biases except a unit forget-gate bias.
  static RaeWeights initialized_orthogonal(const Architecture& a, Rng& rng) {
    RaeWeights w = zeros(a);
    auto glorot = [&](auto&& block, Index fan_in, Index fan_out) {
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      for (Index j = 0; j < block.cols(); ++j)
        for (Index i = 0; i < block.rows(); ++i) block(i, j) = rng.uniform(-bound, bound);
    };
    auto orthogonal = [&](auto&& block) {
      Matrix g(block.rows(), block.cols());
      for (Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
      Eigen::HouseholderQR<Matrix> qr(g);
      Matrix q = qr.householderQ();
      for (Index j = 0; j < q.cols(); ++j)
        if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
      block = q;
    };
    auto lstm = [&](LstmLayerWeights& l) {
      glorot(l.W.rightCols(l.input), l.input, 4 * l.hidden);
      for (Index g = 0; g < 4; ++g) orthogonal(l.W.block(g * l.hidden, 0, l.hidden, l.hidden));
      l.b_f().setOnes();
    };
    lstm(w.encoder);
    glorot(w.encoder_dense_W, a.n_hidden * a.n_t, a.n_latent);
    for (auto& layer : w.decoder) lstm(layer);
    glorot(w.head_W, a.n_hidden, a.n_qoi);
    return w;
  }

  void validate() const {
    encoder.validate();
    for (const auto& l : decoder) l.validate();
    if (encoder.input != arch.n_qoi || encoder.hidden != arch.n_hidden ||
        encoder_dense_W.rows() != arch.n_latent || encoder_dense_W.cols() != arch.n_hidden * arch.n_t ||
        encoder_dense_b.size() != arch.n_latent || decoder[0].input != arch.n_latent ||
        decoder[1].input != arch.n_hidden || decoder[2].input != arch.n_hidden ||
        head_W.rows() != arch.n_qoi || head_W.cols() != arch.n_hidden || head_b.size() != arch.n_qoi)
      throw SchemaError("RAE layer shapes do not chain");
    if (norm.lo.size() != arch.n_qoi || norm.hi.size() != arch.n_qoi || !((norm.hi - norm.lo).array() > 0.0).all())
      throw SchemaError("RAE normalization bounds invalid");
  }
};

template <class W, class F>
  requires std::same_as<std::remove_const_t<W>, RaeWeights>
void visit_blocks(W& w, F&& f) {
  f(w.encoder.W);
  f(w.encoder.b);
  f(w.encoder_dense_W);
  f(w.encoder_dense_b);
  for (auto& layer : w.decoder) {
    f(layer.W);
    f(layer.b);
  }
  f(w.head_W);
  f(w.head_b);
}

inline Index parameter_count(const RaeWeights& w) {
  Index n = 0;
  visit_blocks(w, [&](const auto& m) { n += m.size(); });
  return n;
}

inline Vector flatten(const RaeWeights& w) {
  Vector out(parameter_count(w));
  Index off = 0;
  visit_blocks(w, [&](const auto& m) {
    out.segment(off, m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
    off += m.size();
  });
  return out;
}

inline void unflatten(const Vector& flat, RaeWeights& w) {
  if (flat.size() != parameter_count(w)) throw SchemaError("flat parameter vector has wrong length");
  Index off = 0;
  visit_blocks(w, [&](auto& m) {
    Eigen::Map<Vector>(m.data(), m.size()) = flat.segment(off, m.size());
    off += m.size();
  });
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Min/max of each quantity over all members and times. A constant quantity
/// gets bounds widened by one unit either side.
inline Normalization fit_normalization(const Ensemble& e) {
  const auto& s = *e.schema();
  Normalization n{Vector(s.n_qoi()), Vector(s.n_qoi())};
  for (Index q = 0; q < s.n_qoi(); ++q) {
    const auto block = e.matrix().middleRows(q * s.n_t(), s.n_t());
    n.lo[q] = block.minCoeff();
    n.hi[q] = block.maxCoeff();
    if (!(n.hi[q] > n.lo[q])) {
      n.lo[q] -= 1.0;
      n.hi[q] += 1.0;
    }
  }
  return n;
}

/// Flattened (quantity-major) columns mapped to [-1, 1] per quantity.
inline Matrix normalize(const Normalization& n, const Matrix& flat_cols, Index n_t) {
  Matrix out(flat_cols.rows(), flat_cols.cols());
  for (Index q = 0; q < n.lo.size(); ++q) {
    const double scale = 2.0 / (n.hi[q] - n.lo[q]);
    out.middleRows(q * n_t, n_t) = ((flat_cols.middleRows(q * n_t, n_t).array() - n.lo[q]) * scale - 1.0).matrix();
  }
  return out;
}

inline Matrix denormalize(const Normalization& n, const Matrix& flat_cols, Index n_t) {
  Matrix out(flat_cols.rows(), flat_cols.cols());
  for (Index q = 0; q < n.lo.size(); ++q) {
    const double half_span = 0.5 * (n.hi[q] - n.lo[q]);
    out.middleRows(q * n_t, n_t) = ((flat_cols.middleRows(q * n_t, n_t).array() + 1.0) * half_span + n.lo[q]).matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes (batched: columns are members, rows quantity-major)
// ---------------------------------------------------------------------------

struct EncoderCache {
  std::vector<Matrix> inputs;  // per step, n_qoi x B
  LstmSequenceCache lstm;
  Matrix flat_hidden;  // (n_hidden * n_t) x B
};

struct DecoderCache {
  std::vector<Matrix> latent;  // single entry: the repeated input
  std::array<LstmSequenceCache, 3> lstm;
  std::vector<Matrix> outputs;  // per step, n_qoi x B, tanh outputs
};

inline Matrix encoder_forward_batch(const RaeWeights& w, const Matrix& d_norm, EncoderCache* cache = nullptr) {
  const auto& a = w.arch;
  if (d_norm.rows() != a.n_qoi * a.n_t) throw SchemaError("encoder input has wrong length");
  std::vector<Matrix> inputs(static_cast<std::size_t>(a.n_t));
  for (Index t = 0; t < a.n_t; ++t)
    inputs[static_cast<std::size_t>(t)] = d_norm(Eigen::seqN(t, a.n_qoi, a.n_t), Eigen::all);
  LstmSequenceCache lstm = lstm_sequence_forward(w.encoder, inputs, a.n_t, false);
  Matrix flat(a.n_hidden * a.n_t, d_norm.cols());
  for (Index t = 0; t < a.n_t; ++t) flat.middleRows(t * a.n_hidden, a.n_hidden) = lstm.h[static_cast<std::size_t>(t)];
  Matrix xi = w.encoder_dense_W * flat;
  xi.colwise() += w.encoder_dense_b;
  if (cache) *cache = {std::move(inputs), std::move(lstm), std::move(flat)};
  return xi;
}

/// Decodes the first n_steps reporting steps (all of them by default); the
/// decoder is causal, so a prefix is exact. Output rows are quantity-major
/// with stride n_steps.
inline Matrix decoder_forward_batch(const RaeWeights& w, const Matrix& xi, DecoderCache* cache = nullptr,
                                    Index n_steps = -1) {
  const auto& a = w.arch;
  if (xi.rows() != a.n_latent) throw SchemaError("latent vector has wrong length");
  if (n_steps < 0) n_steps = a.n_t;
  std::vector<Matrix> latent{xi};
  std::array<LstmSequenceCache, 3> lstm;
  lstm[0] = lstm_sequence_forward(w.decoder[0], latent, n_steps, true);
  lstm[1] = lstm_sequence_forward(w.decoder[1], lstm[0].h, n_steps, false);
  lstm[2] = lstm_sequence_forward(w.decoder[2], lstm[1].h, n_steps, false);
  std::vector<Matrix> outputs(static_cast<std::size_t>(n_steps));
  Matrix out(a.n_qoi * n_steps, xi.cols());
  for (Index t = 0; t < n_steps; ++t) {
    Matrix y = w.head_W * lstm[2].h[static_cast<std::size_t>(t)];
    y.colwise() += w.head_b;
    y = y.array().tanh().matrix();
    out(Eigen::seqN(t, a.n_qoi, n_steps), Eigen::all) = y;
    outputs[static_cast<std::size_t>(t)] = std::move(y);
  }
  if (cache) *cache = {std::move(latent), std::move(lstm), std::move(outputs)};
  return out;
}

/// xi from a normalized (n_qoi x n_t) data matrix.
inline Vector encoder_forward(const RaeWeights& w, const RowMatrix& d_norm) {
  if (d_norm.rows() != w.arch.n_qoi || d_norm.cols() != w.arch.n_t)
    throw SchemaError("encoder input must be n_qoi x n_t");
  const Vector flat = Eigen::Map<const Vector>(d_norm.data(), d_norm.size());
  return encoder_forward_batch(w, flat).col(0);
}

/// Normalized (n_qoi x n_t) reconstruction with entries in (-1, 1).
inline RowMatrix decoder_forward(const RaeWeights& w, const Vector& xi) {
  const Matrix flat = decoder_forward_batch(w, xi);
  return Eigen::Map<const RowMatrix>(flat.data(), w.arch.n_qoi, w.arch.n_t);
}

// ---------------------------------------------------------------------------
// Loss and gradient
// ---------------------------------------------------------------------------

/// Mean over members of the squared L2 reconstruction error of normalized
/// flattened vectors.
inline double rae_loss(const RaeWeights& w, const Matrix& batch_norm) {
  if (batch_norm.cols() < 1) throw SchemaError("empty batch");
  const Matrix recon = decoder_forward_batch(w, encoder_forward_batch(w, batch_norm));
  return (recon - batch_norm).colwise().squaredNorm().sum() / static_cast<double>(batch_norm.cols());
}

/// Adds scale * d/dw sum_i ||d_i - f(d_i)||^2 over the columns of batch_norm
/// into grad; returns the summed squared error.
inline double accumulate_gradient(const RaeWeights& w, const Matrix& batch_norm, double scale, RaeWeights& grad) {
  const auto& a = w.arch;
  const auto T = static_cast<std::size_t>(a.n_t);
  EncoderCache enc;
  DecoderCache dec;
  const Matrix xi = encoder_forward_batch(w, batch_norm, &enc);
  const Matrix recon = decoder_forward_batch(w, xi, &dec);
  const Matrix resid = recon - batch_norm;
  const double sse = resid.squaredNorm();

  // Dense tanh head.
  std::vector<Matrix> dh3(T);
  for (std::size_t t = 0; t < T; ++t) {
    const auto ti = static_cast<Index>(t);
    const Matrix& y = dec.outputs[t];
    const Matrix dy = 2.0 * scale * resid(Eigen::seqN(ti, a.n_qoi, a.n_t), Eigen::all);
    const Matrix da = (dy.array() * (1.0 - y.array().square())).matrix();
    grad.head_W.noalias() += da * dec.lstm[2].h[t].transpose();
    grad.head_b += da.rowwise().sum();
    dh3[t].noalias() = w.head_W.transpose() * da;
  }

  auto dh2 = lstm_sequence_backward(w.decoder[2], dec.lstm[2], dec.lstm[1].h, false, dh3, grad.decoder[2], true);
  auto dh1 = lstm_sequence_backward(w.decoder[1], dec.lstm[1], dec.lstm[0].h, false, dh2, grad.decoder[1], true);
  auto dxi = lstm_sequence_backward(w.decoder[0], dec.lstm[0], dec.latent, true, dh1, grad.decoder[0], true);

  // Encoder dense layer, then the encoder LSTM.
  const Matrix& dlatent = dxi.front();
  grad.encoder_dense_W.noalias() += dlatent * enc.flat_hidden.transpose();
  grad.encoder_dense_b += dlatent.rowwise().sum();
  const Matrix dflat = w.encoder_dense_W.transpose() * dlatent;
  std::vector<Matrix> dh_enc(T);
  for (std::size_t t = 0; t < T; ++t)
    dh_enc[t] = dflat.middleRows(static_cast<Index>(t) * a.n_hidden, a.n_hidden);
  lstm_sequence_backward(w.encoder, enc.lstm, enc.inputs, false, dh_enc, grad.encoder, false);
  return sse;
}

struct LossAndGradient {
  double loss = 0.0;
  RaeWeights gradient;
};

/// Exact gradient of rae_loss over the batch.
inline LossAndGradient rae_backprop(const RaeWeights& w, const Matrix& batch_norm) {
  if (batch_norm.cols() < 1) throw SchemaError("empty batch");
  LossAndGradient out{0.0, RaeWeights::zeros(w.arch)};
  out.gradient.norm = w.norm;
  const double inv_n = 1.0 / static_cast<double>(batch_norm.cols());
  out.loss = accumulate_gradient(w, batch_norm, inv_n, out.gradient) * inv_n;
  return out;
}

/// Same quantity computed over fixed-size column chunks in parallel and
/// summed in chunk order, so the result does not depend on the thread count.
inline LossAndGradient rae_backprop_chunked(const RaeWeights& w, const Matrix& batch_norm, Index chunk) {
  const Index n = batch_norm.cols();
  if (n < 1) throw SchemaError("empty batch");
  chunk = std::max<Index>(1, chunk);
  const Index n_chunks = (n + chunk - 1) / chunk;
  if (n_chunks == 1) return rae_backprop(w, batch_norm);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<RaeWeights> grads(static_cast<std::size_t>(n_chunks), RaeWeights::zeros(w.arch));
  std::vector<double> sse(static_cast<std::size_t>(n_chunks), 0.0);
  parallel_for(static_cast<std::size_t>(n_chunks), [&](std::size_t c) {
    const Index start = static_cast<Index>(c) * chunk;
    const Index len = std::min(chunk, n - start);
    sse[c] = accumulate_gradient(w, batch_norm.middleCols(start, len), inv_n, grads[c]);
  });
  LossAndGradient out{0.0, std::move(grads.front())};
  out.gradient.norm = w.norm;
  auto total = parameter_blocks(out.gradient);
  for (std::size_t c = 1; c < grads.size(); ++c) {
    auto part = parameter_blocks(std::as_const(grads[c]));
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += part[k];
  }
  out.loss = std::accumulate(sse.begin(), sse.end(), 0.0) * inv_n;
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  Index epochs = 500;
  Index batch_size = 32;
  double learning_rate = 1e-3;
  Index n_hidden = 50;
  Index n_latent = 31;
  double clip_norm = 5.0;
  Index chunk = 16;  // members per gradient work unit
  std::uint64_t seed = 0;
  bool orthogonal_init = false;
};

struct TrainResult {
  RaeWeights weights;
  std::vector<double> loss_history;  // mean per-member loss of each epoch
};

using EpochCallback = std::function<void(Index epoch, double loss)>;

inline TrainResult train_rae(const Ensemble& e, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  const auto& s = *e.schema();
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.learning_rate > 0.0))
    throw ConfigError("invalid RAE training configuration");
  if (e.size() < cfg.batch_size)
    throw ConfigError("ensemble has fewer members (" + std::to_string(e.size()) + ") than the batch size");

  Rng rng(cfg.seed);
  const Architecture arch{s.n_qoi(), s.n_t(), cfg.n_hidden, cfg.n_latent};
  TrainResult result{cfg.orthogonal_init ? RaeWeights::initialized_orthogonal(arch, rng) : RaeWeights::initialized(arch, rng), {}};
  auto& w = result.weights;
  w.norm = fit_normalization(e);
  const Matrix data = normalize(w.norm, e.matrix(), s.n_t());

  auto adam = make_adam_state(RaeWeights::zeros(arch), AdamConfig{cfg.learning_rate});
  std::vector<Index> order(static_cast<std::size_t>(e.size()));
  std::iota(order.begin(), order.end(), Index{0});

  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t k = order.size() - 1; k > 0; --k) std::swap(order[k], order[rng.below(k + 1)]);
    double epoch_sse = 0.0;
    for (Index start = 0; start < e.size(); start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, e.size() - start);
      const std::vector<Index> cols(order.begin() + start, order.begin() + start + len);
      const Matrix batch = data(Eigen::all, cols);
      auto lg = rae_backprop_chunked(w, batch, cfg.chunk);
      if (!std::isfinite(lg.loss) || !std::isfinite(global_norm(lg.gradient))) {
        std::ostringstream msg;
        msg << "non-finite RAE loss at epoch " << epoch << ", batch starting " << start << " (loss " << lg.loss
            << ", previous epoch loss "
            << (result.loss_history.empty() ? NAN : result.loss_history.back()) << ")";
        throw NumericalError(msg.str());
      }
      clip_global_norm(lg.gradient, cfg.clip_norm);
      adam_step(adam, w, lg.gradient);
      epoch_sse += lg.loss * static_cast<double>(len);
    }
    result.loss_history.push_back(epoch_sse / static_cast<double>(e.size()));
    if (on_epoch) on_epoch(epoch, result.loss_history.back());
  }
  return result;
}

// ---------------------------------------------------------------------------
// Physical-space encode / decode
// ---------------------------------------------------------------------------

inline void check_schema(const RaeWeights& w, const DataSchema& s) {
  if (s.n_qoi() != w.arch.n_qoi || s.n_t() != w.arch.n_t)
    throw SchemaError("data schema does not match the RAE architecture");
}

/// Latent matrix (n_latent x n_r) of every member.
inline Matrix rae_encode(const RaeWeights& w, const Ensemble& e) {
  check_schema(w, *e.schema());
  return encoder_forward_batch(w, normalize(w.norm, e.matrix(), w.arch.n_t));
}

inline Vector rae_encode(const RaeWeights& w, const DataVector& d) {
  check_schema(w, *d.schema());
  return encoder_forward_batch(w, normalize(w.norm, d.flat(), w.arch.n_t)).col(0);
}

/// Physical data (n_f x B) for latent columns.
inline Matrix rae_decode_batch(const RaeWeights& w, const Matrix& xi) {
  return denormalize(w.norm, decoder_forward_batch(w, xi), w.arch.n_t);
}

inline DataVector rae_decode(const RaeWeights& w, const Vector& xi, const SchemaPtr& schema) {
  check_schema(w, *schema);
  return {schema, rae_decode_batch(w, xi).col(0)};
}

/// Decoded physical values at flattened rows only, running the decoder just
/// far enough to cover the latest requested step.
inline Matrix rae_decode_rows(const RaeWeights& w, const Matrix& xi, const std::vector<Index>& rows) {
  const Index n_t = w.arch.n_t;
  Index last = 0;
  for (Index r : rows) last = std::max(last, r % n_t);
  const Index steps = rows.empty() ? 1 : last + 1;
  const Matrix prefix = decoder_forward_batch(w, xi, nullptr, steps);
  Matrix out(static_cast<Index>(rows.size()), xi.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index q = rows[k] / n_t, t = rows[k] % n_t;
    const double half_span = 0.5 * (w.norm.hi[q] - w.norm.lo[q]);
    out.row(static_cast<Index>(k)) = ((prefix.row(q * steps + t).array() + 1.0) * half_span + w.norm.lo[q]).matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: <dir>/rae_weights.json (metadata, block table) and
// <dir>/rae_weights.bin (little-endian float64 payload, blocks in order).
// ---------------------------------------------------------------------------

inline std::vector<std::string> block_names() {
  return {"encoder.W",   "encoder.b",   "encoder_dense.W", "encoder_dense.b", "decoder0.W", "decoder0.b",
          "decoder1.W",  "decoder1.b",  "decoder2.W",      "decoder2.b",      "head.W",     "head.b"};
}

inline void save(const std::filesystem::path& dir, const RaeWeights& w, const io::json& hyperparameters = {}) {
  static_assert(std::endian::native == std::endian::little, "weight payload assumes a little-endian host");
  io::json blocks = io::json::array();
  const auto names = block_names();
  std::size_t k = 0;
  Index offset = 0;
  visit_blocks(w, [&](const auto& m) {
    blocks.push_back({{"name", names[k++]}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += m.size();
  });
  io::json meta = {{"format", "dsi-rae-weights"},
                   {"version", 1},
                   {"architecture",
                    {{"n_qoi", w.arch.n_qoi},
                     {"n_t", w.arch.n_t},
                     {"n_hidden", w.arch.n_hidden},
                     {"n_latent", w.arch.n_latent}}},
                   {"parameter_count", parameter_count(w)},
                   {"normalization", {{"lo", io::to_json(w.norm.lo)}, {"hi", io::to_json(w.norm.hi)}}},
                   {"hyperparameters", hyperparameters},
                   {"storage", "column-major float64 little-endian"},
                   {"payload", "rae_weights.bin"},
                   {"blocks", blocks}};
  io::write_json(dir / "rae_weights.json", meta);
  const Vector flat = flatten(w);
  auto out = io::open_for_write(dir / "rae_weights.bin");
  out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw IoError("write failed: " + (dir / "rae_weights.bin").string());
}

inline RaeWeights load(const std::filesystem::path& dir) {
  const auto meta = io::read_json(dir / "rae_weights.json");
  if (meta.value("format", "") != "dsi-rae-weights" || meta.value("version", 0) != 1)
    throw IoError("unsupported RAE weight format in " + dir.string());
  const auto& a = meta.at("architecture");
  RaeWeights w = RaeWeights::zeros({a.at("n_qoi").get<Index>(), a.at("n_t").get<Index>(),
                                    a.at("n_hidden").get<Index>(), a.at("n_latent").get<Index>()});
  w.norm.lo = io::vector_from_json(meta.at("normalization").at("lo"));
  w.norm.hi = io::vector_from_json(meta.at("normalization").at("hi"));
  Vector flat(parameter_count(w));
  auto in = io::open_for_read(dir / "rae_weights.bin");
  in.read(reinterpret_cast<char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(flat.size() * sizeof(double)))
    throw IoError("truncated RAE weight payload in " + dir.string());
  unflatten(flat, w);
  w.validate();
  return w;
}

}  // namespace dsi::rae
