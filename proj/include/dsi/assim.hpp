#pragma once

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "dsi/adam.hpp"
#include "dsi/core.hpp"
#include "dsi/parallel.hpp"
#include "dsi/rng.hpp"

namespace dsi::assim {

/// Inflation schedule and noise seed of one ESMDA run.
struct EsmdaConfig {
  std::vector<double> alphas;
  std::uint64_t seed = 0;

  Index n_a() const { return static_cast<Index>(alphas.size()); }

  void validate() const {
    if (alphas.empty()) throw ConfigError("ESMDA needs at least one iteration");
    double inv = 0.0;
    for (double a : alphas) {
      if (!(a > 0.0) || !std::isfinite(a)) throw ConfigError("ESMDA inflation factors must be positive");
      inv += 1.0 / a;
    }
    if (std::abs(inv - 1.0) > 1e-10)
      throw ConfigError("ESMDA inflation factors must satisfy sum(1/alpha) = 1, got " + std::to_string(inv));
  }
};

/// Uniform schedule alpha_k = n_a.
inline std::vector<double> default_alphas(Index n_a) {
  if (n_a < 1) throw ConfigError("ESMDA needs at least one iteration");
  return std::vector<double>(static_cast<std::size_t>(n_a), static_cast<double>(n_a));
}

inline EsmdaConfig uniform_config(Index n_a, std::uint64_t seed) { return {default_alphas(n_a), seed}; }

/// Sample cross-covariance of paired samples stored as columns.
inline Matrix cross_cov(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw SchemaError("cross-covariance needs equal sample counts");
  if (a.cols() < 2) throw SchemaError("cross-covariance needs at least two samples");
  const Matrix ac = a.colwise() - a.rowwise().mean();
  const Matrix bc = b.colwise() - b.rowwise().mean();
  return ac * bc.transpose() / static_cast<double>(a.cols() - 1);
}

/// Per-quantity clamp bounds.
struct Bounds {
  Vector lower;
  Vector upper;

  /// Rates: [0, +inf) for every quantity.
  static Bounds nonnegative(Index n_qoi) {
    return {Vector::Zero(n_qoi), Vector::Constant(n_qoi, std::numeric_limits<double>::infinity())};
  }
};

inline Ensemble truncate(const Ensemble& e, const Bounds& b) {
  const auto& s = *e.schema();
  if (b.lower.size() != s.n_qoi() || b.upper.size() != s.n_qoi())
    throw SchemaError("truncation bounds need one value per quantity");
  if ((b.lower.array() > b.upper.array()).any()) throw ConfigError("truncation lower bound exceeds upper bound");
  Matrix m = e.matrix();
  for (Index q = 0; q < s.n_qoi(); ++q)
    m.middleRows(q * s.n_t(), s.n_t()) = m.middleRows(q * s.n_t(), s.n_t()).cwiseMax(b.lower[q]).cwiseMin(b.upper[q]);
  return {e.schema(), std::move(m), e.ids()};
}

/// Mean over members of the normalized squared misfit (1/n_hm) sum ((Hd - d_obs)/sigma)^2.
inline double mean_mismatch(const Matrix& d_hm, const ObservationSet& obs) {
  if (obs.empty() || d_hm.cols() == 0) return 0.0;
  const Matrix r = (d_hm.colwise() - obs.values()).array().colwise() / obs.error_std().array();
  return r.colwise().squaredNorm().mean() / static_cast<double>(obs.size());
}

struct IterationDiagnostics {
  Index iteration = 0;  // 1-based; n_a + 1 denotes the final ensemble
  double alpha = 0.0;
  double mean_mismatch = 0.0;
};

namespace detail {

/// Solves (C + alpha C_D) X = rhs by Cholesky, retrying once with
/// 1e-10 * trace / n added to the diagonal.
inline Matrix inflated_solve(const Matrix& c_hm, const Vector& var, double alpha, const Matrix& rhs) {
  Matrix s = c_hm;
  s.diagonal() += alpha * var;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    const double jitter = 1e-10 * s.trace() / static_cast<double>(s.rows());
    s.diagonal().array() += jitter;
    llt.compute(s);
    if (llt.info() != Eigen::Success || !(jitter > 0.0))
      throw NumericalError("ESMDA: C_dhm + alpha C_D is not positive definite");
  }
  return llt.solve(rhs);
}

/// Perturbed observations d_obs + sqrt(alpha) e_i, one column per member,
/// drawn from the stream of (seed, member id, iteration).
inline Matrix perturbed_observations(const ObservationSet& obs, const std::vector<std::uint64_t>& ids,
                                     std::uint64_t seed, Index iteration, double alpha) {
  Matrix out(obs.size(), static_cast<Index>(ids.size()));
  const double scale = std::sqrt(alpha);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Rng rng(derive_seed(seed, ids[i], static_cast<std::uint64_t>(iteration)));
    for (Index k = 0; k < obs.size(); ++k)
      out(k, static_cast<Index>(i)) = obs.values()[k] + scale * obs.error_std()[k] * rng.normal();
  }
  return out;
}

/// One ESMDA update of the state columns x given their predicted observed
/// values d_hm.
inline void update_state(Matrix& x, const Matrix& d_hm, const ObservationSet& obs,
                         const std::vector<std::uint64_t>& ids, std::uint64_t seed, Index iteration, double alpha) {
  const Matrix c_x_hm = cross_cov(x, d_hm);
  const Matrix c_hm = cross_cov(d_hm, d_hm);
  const Matrix innovation = perturbed_observations(obs, ids, seed, iteration, alpha) - d_hm;
  x.noalias() += c_x_hm * inflated_solve(c_hm, obs.variance(), alpha, innovation);
}

}  // namespace detail

struct EsmdaResult {
  Ensemble posterior;
  std::vector<IterationDiagnostics> diagnostics;
};

/// ESMDA directly on data vectors.
inline EsmdaResult esmda_update_data(const Ensemble& prior, const ObservationSet& obs, const EsmdaConfig& cfg) {
  cfg.validate();
  obs.require_positive_errors();
  if (prior.size() < 2) throw SchemaError("ESMDA needs at least two members");
  const auto idx = obs.flat_indices(*prior.schema());
  Matrix d = prior.matrix();
  EsmdaResult out;
  for (Index k = 0; k < cfg.n_a(); ++k) {
    const double alpha = cfg.alphas[static_cast<std::size_t>(k)];
    const Matrix d_hm = d(idx, Eigen::all);
    out.diagnostics.push_back({k + 1, alpha, mean_mismatch(d_hm, obs)});
    detail::update_state(d, d_hm, obs, prior.ids(), cfg.seed, k, alpha);
  }
  const Matrix d_hm = d(idx, Eigen::all);
  out.diagnostics.push_back({cfg.n_a() + 1, 0.0, mean_mismatch(d_hm, obs)});
  out.posterior = Ensemble(prior.schema(), std::move(d), prior.ids());
  return out;
}

// ---------------------------------------------------------------------------
// Latent-space samplers
// ---------------------------------------------------------------------------

/// Latent vectors (columns) of a parameterized ensemble with stable ids.
struct LatentEnsemble {
  std::string tag;  // "pca", "pca_ht" or "rae"
  Matrix xi;        // n_l x n_r
  std::vector<std::uint64_t> ids;

  Index size() const { return xi.cols(); }
  Index n_latent() const { return xi.rows(); }

  void validate() const {
    if (tag.empty()) throw SchemaError("latent ensemble has no parameterization tag");
    if (static_cast<Index>(ids.size()) != xi.cols()) throw SchemaError("latent ids and members differ in count");
    if (xi.rows() < 1) throw SchemaError("latent dimension must be positive");
  }
};

/// Latent-to-data map. `full` returns n_f x B decoded columns; `rows`
/// returns only the requested flattened rows.
struct LatentDecoder {
  SchemaPtr schema;
  Index n_latent = 0;
  std::function<Matrix(const Matrix&)> full;
  std::function<Matrix(const Matrix&, const std::vector<Index>&)> rows;
};

namespace detail {

inline void check_decoded(const Matrix& out, const std::vector<std::uint64_t>& ids) {
  for (Index i = 0; i < out.cols(); ++i)
    if (!out.col(i).allFinite())
      throw NumericalError("decoder produced non-finite values for member " +
                           std::to_string(ids[static_cast<std::size_t>(i)]));
}

}  // namespace detail

struct LatentEsmdaResult {
  LatentEnsemble latent;
  Ensemble posterior;
  std::vector<IterationDiagnostics> diagnostics;
};

/// ESMDA on latent variables, d_hm = H f(xi), followed by decoding.
inline LatentEsmdaResult esmda_update_latent(const LatentEnsemble& prior, const LatentDecoder& dec,
                                             const ObservationSet& obs, const EsmdaConfig& cfg) {
  cfg.validate();
  prior.validate();
  obs.require_positive_errors();
  if (prior.size() < 2) throw SchemaError("ESMDA needs at least two members");
  if (prior.n_latent() != dec.n_latent) throw SchemaError("latent ensemble does not match decoder dimension");
  const auto idx = obs.flat_indices(*dec.schema);
  LatentEsmdaResult out;
  out.latent = prior;
  Matrix& xi = out.latent.xi;
  for (Index k = 0; k < cfg.n_a(); ++k) {
    const double alpha = cfg.alphas[static_cast<std::size_t>(k)];
    const Matrix d_hm = dec.rows(xi, idx);
    detail::check_decoded(d_hm, prior.ids);
    out.diagnostics.push_back({k + 1, alpha, mean_mismatch(d_hm, obs)});
    detail::update_state(xi, d_hm, obs, prior.ids, cfg.seed, k, alpha);
  }
  Matrix d = dec.full(xi);
  detail::check_decoded(d, prior.ids);
  out.diagnostics.push_back({cfg.n_a() + 1, 0.0, mean_mismatch(d(idx, Eigen::all), obs)});
  out.posterior = Ensemble(dec.schema, std::move(d), prior.ids);
  return out;
}

struct RmlConfig {
  AdamConfig adam{0.05};
  Index max_iterations = 500;
  double gradient_tolerance = 1e-6;
  double fd_step = 1e-4;
};

/// RML objective 0.5 |(H f(xi) - d*)/sigma|^2 + 0.5 |xi - xi*|^2.
inline double rml_objective(const LatentDecoder& dec, const std::vector<Index>& idx, const Vector& sigma,
                            const Vector& d_star, const Vector& xi_star, const Vector& xi) {
  double misfit = 0.0;
  if (!idx.empty()) {
    const Matrix pred = dec.rows(xi, idx);
    misfit = ((pred.col(0) - d_star).cwiseQuotient(sigma)).squaredNorm();
  }
  return 0.5 * misfit + 0.5 * (xi - xi_star).squaredNorm();
}

struct RmlSample {
  Vector xi;
  double objective = 0.0;
  double start_objective = 0.0;
  Index iterations = 0;
};

/// One RML draw: d* ~ N(d_obs, C_D), then xi* ~ N(0, I), then ADAM from xi*
/// on central-difference gradients. Returns the best iterate seen.
inline RmlSample rml_sample(Index n_latent, const LatentDecoder& dec, const ObservationSet& obs, Rng& rng,
                            const RmlConfig& cfg = {}) {
  if (n_latent != dec.n_latent) throw SchemaError("RML latent dimension does not match decoder");
  if (!obs.empty()) obs.require_positive_errors();
  const auto idx = obs.flat_indices(*dec.schema);
  const Vector d_star = perturb_observations(obs, rng);
  Vector xi_star(n_latent);
  for (Index k = 0; k < n_latent; ++k) xi_star[k] = rng.normal();

  auto objective = [&](const Vector& xi) {
    const double f = rml_objective(dec, idx, obs.error_std(), d_star, xi_star, xi);
    if (!std::isfinite(f)) {
      std::ostringstream msg;
      msg << "RML objective is not finite at xi = [" << xi.transpose() << "]";
      throw NumericalError(msg.str());
    }
    return f;
  };

  Vector xi = xi_star;
  RmlSample best{xi, objective(xi), 0.0, 0};
  best.start_objective = best.objective;
  auto state = make_adam_state<Vector>(Vector::Zero(n_latent), cfg.adam);
  Vector grad(n_latent);
  for (Index it = 0; it < cfg.max_iterations; ++it) {
    for (Index k = 0; k < n_latent; ++k) {
      Vector probe = xi;
      probe[k] = xi[k] + cfg.fd_step;
      const double up = objective(probe);
      probe[k] = xi[k] - cfg.fd_step;
      grad[k] = (up - objective(probe)) / (2.0 * cfg.fd_step);
    }
    best.iterations = it + 1;
    if (grad.norm() < cfg.gradient_tolerance) break;
    adam_step(state, xi, grad);
    const double f = objective(xi);
    if (f < best.objective) {
      best.objective = f;
      best.xi = xi;
    }
  }
  return best;
}

/// n independent RML samples; sample i uses the stream derive_seed(seed, i).
inline LatentEsmdaResult rml_ensemble(Index n, const LatentDecoder& dec, const ObservationSet& obs,
                                      std::uint64_t seed, const std::string& tag, const RmlConfig& cfg = {}) {
  if (n < 1) throw ConfigError("RML needs at least one sample");
  LatentEsmdaResult out;
  out.latent.tag = tag;
  out.latent.xi.resize(dec.n_latent, n);
  out.latent.ids.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    const auto s = rml_sample(dec.n_latent, dec, obs, rng, cfg);
    out.latent.xi.col(static_cast<Index>(i)) = s.xi;
    out.latent.ids[i] = i;
  });
  Matrix d = dec.full(out.latent.xi);
  detail::check_decoded(d, out.latent.ids);
  const auto idx = obs.flat_indices(*dec.schema);
  out.diagnostics.push_back({1, 0.0, mean_mismatch(d(idx, Eigen::all), obs)});
  out.posterior = Ensemble(dec.schema, std::move(d), out.latent.ids);
  return out;
}

}  // namespace dsi::assim
