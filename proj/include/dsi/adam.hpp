#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dsi/core.hpp"

namespace dsi {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// A parameter set P is any type with visit_blocks(P&, f) calling f on each
// contiguous Eigen block (matrix or vector) in a fixed order.

template <class F>
void visit_blocks(Vector& v, F&& f) {
  f(v);
}
template <class F>
void visit_blocks(const Vector& v, F&& f) {
  f(v);
}

template <class P>
std::vector<Eigen::Map<Vector>> parameter_blocks(P& p) {
  std::vector<Eigen::Map<Vector>> out;
  visit_blocks(p, [&](auto& m) { out.emplace_back(m.data(), m.size()); });
  return out;
}

template <class P>
std::vector<Eigen::Map<const Vector>> parameter_blocks(const P& p) {
  std::vector<Eigen::Map<const Vector>> out;
  visit_blocks(p, [&](const auto& m) { out.emplace_back(m.data(), m.size()); });
  return out;
}

template <class P>
double global_norm(const P& p) {
  double sq = 0.0;
  for (const auto& b : parameter_blocks(p)) sq += b.squaredNorm();
  return std::sqrt(sq);
}

template <class P>
void scale_in_place(P& p, double factor) {
  for (auto& b : parameter_blocks(p)) b *= factor;
}

/// Rescales g so its global L2 norm is at most max_norm; returns the
/// pre-clipping norm.
template <class P>
double clip_global_norm(P& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm > 0.0 && n > max_norm) scale_in_place(g, max_norm / n);
  return n;
}

/// Moment accumulators shaped like the parameters.
template <class P>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  P m;
  P v;
};

/// Zero-initialized state; `zeros` is a parameter set of the right shape
/// filled with zeros.
template <class P>
AdamState<P> make_adam_state(const P& zeros, AdamConfig config = {}) {
  return {config, 0, zeros, zeros};
}

/// One bias-corrected ADAM update of w in place.
template <class P>
void adam_step(AdamState<P>& state, P& w, const P& grad) {
  state.step += 1;
  const auto& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto wb = parameter_blocks(w);
  auto gb = parameter_blocks(grad);
  auto mb = parameter_blocks(state.m);
  auto vb = parameter_blocks(state.v);
  if (wb.size() != gb.size() || wb.size() != mb.size() || wb.size() != vb.size())
    throw SchemaError("ADAM parameter structures differ");
  for (std::size_t k = 0; k < wb.size(); ++k) {
    if (wb[k].size() != gb[k].size() || wb[k].size() != mb[k].size())
      throw SchemaError("ADAM block sizes differ");
    mb[k] = c.beta1 * mb[k] + (1.0 - c.beta1) * gb[k];
    vb[k] = c.beta2 * vb[k] + (1.0 - c.beta2) * gb[k].cwiseAbs2();
    wb[k].array() -= c.learning_rate * (mb[k].array() / correction1) /
                     ((vb[k].array() / correction2).sqrt() + c.epsilon);
  }
}

}  // namespace dsi
