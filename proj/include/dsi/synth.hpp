#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "dsi/core.hpp"
#include "dsi/parallel.hpp"

namespace dsi::synth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tank surrogate
// ---------------------------------------------------------------------------

struct UniformRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// log X ~ N(mu, sigma^2).
struct LogNormalRange {
  double mu = 0.0;
  double sigma = 1.0;
};

/// Prior over tank-model parameters.
struct TankPriorConfig {
  Index n_inj = 2;
  Index n_prod = 3;
  LogNormalRange inj_plateau{std::log(500.0), 0.15};
  UniformRange inj_transient{0.0, 0.5};
  UniformRange transient_time{60.0, 120.0};
  double allocation_concentration = 5.0;
  UniformRange breakthrough{600.0, 2400.0};
  UniformRange slope{300.0, 700.0};
  UniformRange watercut_initial{0.05, 0.2};
  UniformRange watercut_max{0.6, 0.95};

  void validate() const {
    auto check_range = [](const UniformRange& r, double lower, double upper, const char* name) {
      if (!(r.lo <= r.hi) || r.lo < lower || r.hi > upper)
        throw ConfigError(std::string("invalid range for ") + name);
    };
    if (n_inj < 1 || n_prod < 1) throw ConfigError("tank model needs at least one injector and producer");
    if (!(inj_plateau.sigma > 0.0) || !std::isfinite(inj_plateau.mu))
      throw ConfigError("inj_plateau log-normal sigma must be > 0");
    check_range(inj_transient, 0.0, 1.0, "inj_transient");
    if (!(inj_transient.hi < 1.0)) throw ConfigError("inj_transient must stay below 1");
    check_range(transient_time, 0.0, INFINITY, "transient_time");
    if (!(transient_time.lo > 0.0)) throw ConfigError("transient_time must be > 0");
    if (!(allocation_concentration > 0.0)) throw ConfigError("allocation_concentration must be > 0");
    check_range(breakthrough, 0.0, INFINITY, "breakthrough");
    if (!(breakthrough.lo > 0.0)) throw ConfigError("breakthrough must be > 0");
    check_range(slope, 0.0, INFINITY, "slope");
    if (!(slope.lo > 0.0)) throw ConfigError("slope must be > 0");
    check_range(watercut_initial, 0.0, 1.0, "watercut_initial");
    check_range(watercut_max, 0.0, 1.0, "watercut_max");
    if (!(watercut_initial.hi < watercut_max.lo))
      throw ConfigError("watercut_initial range must lie below watercut_max range");
  }
};

inline void to_json(json& j, const UniformRange& r) { j = {{"lo", r.lo}, {"hi", r.hi}}; }
inline void from_json(const json& j, UniformRange& r) {
  r.lo = j.at("lo").get<double>();
  r.hi = j.at("hi").get<double>();
}
inline void to_json(json& j, const LogNormalRange& r) { j = {{"mu", r.mu}, {"sigma", r.sigma}}; }
inline void from_json(const json& j, LogNormalRange& r) {
  r.mu = j.at("mu").get<double>();
  r.sigma = j.at("sigma").get<double>();
}

inline void to_json(json& j, const TankPriorConfig& c) {
  j = {{"n_inj", c.n_inj},
       {"n_prod", c.n_prod},
       {"inj_plateau", c.inj_plateau},
       {"inj_transient", c.inj_transient},
       {"transient_time", c.transient_time},
       {"allocation_concentration", c.allocation_concentration},
       {"breakthrough", c.breakthrough},
       {"slope", c.slope},
       {"watercut_initial", c.watercut_initial},
       {"watercut_max", c.watercut_max}};
}

/// Missing keys keep their defaults.
inline void from_json(const json& j, TankPriorConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_inj", c.n_inj);
  get("n_prod", c.n_prod);
  get("inj_plateau", c.inj_plateau);
  get("inj_transient", c.inj_transient);
  get("transient_time", c.transient_time);
  get("allocation_concentration", c.allocation_concentration);
  get("breakthrough", c.breakthrough);
  get("slope", c.slope);
  get("watercut_initial", c.watercut_initial);
  get("watercut_max", c.watercut_max);
}

/// One realization of the tank surrogate.
struct TankModelParams {
  Vector inj_plateau;     // a_i, m3/day
  Vector inj_transient;   // b_i in [0, 1)
  double transient_time;  // t0, days
  Matrix allocation;      // F, n_prod x n_inj, column-stochastic
  Vector breakthrough;    // tau_j, days
  Vector slope;           // s_j, days
  Vector watercut_initial;
  Vector watercut_max;

  Index n_inj() const { return inj_plateau.size(); }
  Index n_prod() const { return breakthrough.size(); }

  void validate() const {
    const Index ni = n_inj(), np = n_prod();
    if (inj_transient.size() != ni || allocation.rows() != np || allocation.cols() != ni ||
        slope.size() != np || watercut_initial.size() != np || watercut_max.size() != np)
      throw ConfigError("tank parameter sizes are inconsistent");
    if ((inj_plateau.array() <= 0.0).any()) throw ConfigError("injection plateau must be > 0");
    if ((inj_transient.array() < 0.0).any() || (inj_transient.array() >= 1.0).any())
      throw ConfigError("injection transient must lie in [0, 1)");
    if (!(transient_time > 0.0)) throw ConfigError("transient time must be > 0");
    if ((allocation.array() < 0.0).any()) throw ConfigError("allocation entries must be >= 0");
    for (Index i = 0; i < ni; ++i)
      if (std::abs(allocation.col(i).sum() - 1.0) > 1e-12)
        throw ConfigError("allocation columns must sum to 1");
    if ((breakthrough.array() <= 0.0).any() || (slope.array() <= 0.0).any())
      throw ConfigError("breakthrough and slope must be > 0");
    for (Index j = 0; j < np; ++j)
      if (!(watercut_initial[j] >= 0.0 && watercut_initial[j] < watercut_max[j] && watercut_max[j] <= 1.0))
        throw ConfigError("water cut bounds must satisfy 0 <= w0 < wmax <= 1");
  }
};

/// Quantity names [I1_WIR.., P1_WPR, P1_OPR, P2_WPR, ...].
inline std::vector<std::string> tank_quantity_names(Index n_inj, Index n_prod) {
  std::vector<std::string> names;
  for (Index i = 0; i < n_inj; ++i) names.push_back("I" + std::to_string(i + 1) + "_WIR");
  for (Index j = 0; j < n_prod; ++j) {
    names.push_back("P" + std::to_string(j + 1) + "_WPR");
    names.push_back("P" + std::to_string(j + 1) + "_OPR");
  }
  return names;
}

/// Reporting grid 30, 60, ..., 3000 days by default.
inline SchemaPtr tank_schema(Index n_inj = 2, Index n_prod = 3, double t_start = 30.0,
                             double t_step = 30.0, Index n_t = 100) {
  return regular_schema(tank_quantity_names(n_inj, n_prod), t_start, t_step, n_t);
}

inline TankModelParams sample_tank_params(const TankPriorConfig& cfg, Rng& rng) {
  cfg.validate();
  TankModelParams p;
  const Index ni = cfg.n_inj, np = cfg.n_prod;
  p.inj_plateau.resize(ni);
  p.inj_transient.resize(ni);
  for (Index i = 0; i < ni; ++i) {
    p.inj_plateau[i] = std::exp(rng.normal(cfg.inj_plateau.mu, cfg.inj_plateau.sigma));
    p.inj_transient[i] = rng.uniform(cfg.inj_transient.lo, cfg.inj_transient.hi);
  }
  p.transient_time = rng.uniform(cfg.transient_time.lo, cfg.transient_time.hi);
  p.allocation.resize(np, ni);
  for (Index i = 0; i < ni; ++i) {
    double total = 0.0;
    for (Index j = 0; j < np; ++j) {
      p.allocation(j, i) = rng.gamma(cfg.allocation_concentration);
      total += p.allocation(j, i);
    }
    p.allocation.col(i) /= total;
  }
  p.breakthrough.resize(np);
  p.slope.resize(np);
  p.watercut_initial.resize(np);
  p.watercut_max.resize(np);
  for (Index j = 0; j < np; ++j) {
    p.breakthrough[j] = rng.uniform(cfg.breakthrough.lo, cfg.breakthrough.hi);
    p.slope[j] = rng.uniform(cfg.slope.lo, cfg.slope.hi);
    p.watercut_initial[j] = rng.uniform(cfg.watercut_initial.lo, cfg.watercut_initial.hi);
    p.watercut_max[j] = rng.uniform(cfg.watercut_max.lo, cfg.watercut_max.hi);
  }
  return p;
}

/// Logistic water cut of one producer at time t.
inline double water_cut(const TankModelParams& p, Index producer, double t) {
  const double w0 = p.watercut_initial[producer];
  const double wmax = p.watercut_max[producer];
  return w0 + (wmax - w0) / (1.0 + std::exp(-(t - p.breakthrough[producer]) / p.slope[producer]));
}

/// Evaluates injection, liquid split and water cut on the schema's time grid.
/// Total liquid production equals total injection at every step.
inline DataVector simulate_tank(const TankModelParams& p, const SchemaPtr& schema) {
  p.validate();
  const Index ni = p.n_inj(), np = p.n_prod();
  if (schema->n_qoi() != ni + 2 * np)
    throw SchemaError("tank schema needs n_inj + 2 n_prod quantities");
  DataVector d = DataVector::zeros(schema);
  Vector wir(ni);
  for (Index t = 0; t < schema->n_t(); ++t) {
    const double time = schema->times()[static_cast<std::size_t>(t)];
    for (Index i = 0; i < ni; ++i) {
      wir[i] = p.inj_plateau[i] * (1.0 - p.inj_transient[i] * std::exp(-time / p.transient_time));
      d(i, t) = wir[i];
    }
    for (Index j = 0; j < np; ++j) {
      const double liquid = p.allocation.row(j).dot(wir);
      const double w = water_cut(p, j, time);
      d(ni + 2 * j, t) = liquid * w;
      d(ni + 2 * j + 1, t) = liquid * (1.0 - w);
    }
  }
  return d;
}

/// Ensemble of n tank realizations; member i is drawn from its own stream
/// derive_seed(seed, i), so any member can be regenerated independently.
inline Ensemble generate_tank_ensemble(const TankPriorConfig& cfg, const SchemaPtr& schema,
                                       Index n, std::uint64_t seed, std::uint64_t first_id = 0) {
  cfg.validate();
  Matrix m(schema->n_f(), n);
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
    const std::uint64_t id = first_id + k;
    Rng rng(derive_seed(seed, id));
    m.col(static_cast<Index>(k)) = simulate_tank(sample_tank_params(cfg, rng), schema).flat();
    ids[k] = id;
  });
  return {schema, std::move(m), std::move(ids)};
}

// ---------------------------------------------------------------------------
// Linear-Gaussian model (oracle for the samplers)
// ---------------------------------------------------------------------------

/// d = G m with m ~ N(mu_m, C_m).
struct LinearGaussianModel {
  SchemaPtr schema;
  Matrix forward;  // G, n_f x n_m
  Vector prior_mean;
  Matrix prior_cov;

  Index n_m() const { return forward.cols(); }

  void validate() const {
    if (!schema) throw ConfigError("linear model without schema");
    if (forward.rows() != schema->n_f()) throw SchemaError("G rows must equal n_f");
    if (prior_mean.size() != n_m() || prior_cov.rows() != n_m() || prior_cov.cols() != n_m())
      throw SchemaError("prior mean/covariance size mismatch");
    if ((prior_cov - prior_cov.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ConfigError("prior covariance is not symmetric");
    if (Eigen::LLT<Matrix>(prior_cov).info() != Eigen::Success)
      throw NumericalError("prior covariance is not positive definite");
  }

  Matrix prior_cholesky() const { return Eigen::LLT<Matrix>(prior_cov).matrixL(); }

  Vector data_mean() const { return forward * prior_mean; }
  Matrix data_cov() const { return forward * prior_cov * forward.transpose(); }
};

inline DataVector simulate_linear(const LinearGaussianModel& model, const Vector& m) {
  if (m.size() != model.n_m())
    throw SchemaError("parameter vector has length " + std::to_string(m.size()) + ", model expects " +
                      std::to_string(model.n_m()));
  return {model.schema, model.forward * m};
}

inline Vector sample_linear_params(const LinearGaussianModel& model, Rng& rng) {
  Vector z(model.n_m());
  for (Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
  return model.prior_mean + model.prior_cholesky() * z;
}

/// Member i is drawn from derive_seed(seed, first_id + i) and carries that id.
inline Ensemble generate_linear_ensemble(const LinearGaussianModel& model, Index n, std::uint64_t seed,
                                         std::uint64_t first_id = 0) {
  model.validate();
  const Matrix chol = model.prior_cholesky();
  Matrix m(model.schema->n_f(), n);
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const std::uint64_t id = first_id + static_cast<std::uint64_t>(i);
    Rng rng(derive_seed(seed, id));
    Vector z(model.n_m());
    for (Index k = 0; k < z.size(); ++k) z[k] = rng.normal();
    m.col(i) = model.forward * (model.prior_mean + chol * z);
    ids[static_cast<std::size_t>(i)] = id;
  }
  return {model.schema, std::move(m), std::move(ids)};
}

struct GaussianPosterior {
  Vector mean;
  Matrix cov;
};

/// Exact conditioning of N(G mu_m, G C_m G^T) on H d = d_obs + e, e ~ N(0, C_D).
inline GaussianPosterior analytic_linear_posterior(const LinearGaussianModel& model,
                                                   const ObservationSet& obs) {
  model.validate();
  const auto idx = obs.flat_indices(*model.schema);
  const Vector mean = model.data_mean();
  const Matrix cov = model.data_cov();
  if (idx.empty()) return {mean, cov};

  const Matrix cov_h = cov(Eigen::all, idx);  // C_d H^T
  Matrix innovation = cov_h(idx, Eigen::all);
  innovation.diagonal() += obs.variance();
  Eigen::LDLT<Matrix> ldlt(innovation);
  const Eigen::JacobiSVD<Matrix> svd(innovation);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  const double cond = smin > 0.0 ? smax / smin : INFINITY;
  if (ldlt.info() != Eigen::Success || !(cond < 1e14))
    throw NumericalError("innovation matrix is singular (condition number " + std::to_string(cond) + ")");

  const Vector residual = obs.values() - mean(idx);
  const Matrix gain = ldlt.solve(cov_h.transpose()).transpose();  // C_d H^T S^-1
  GaussianPosterior post;
  post.mean = mean + gain * residual;
  post.cov = cov - gain * cov_h.transpose();
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  return post;
}

}  // namespace dsi::synth
