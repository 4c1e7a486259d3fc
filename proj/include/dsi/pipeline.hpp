#pragma once

// Config-driven orchestration: prior generation, parameterization training,
// posterior sampling, rejection sampling and evaluation. Every stage reads
// and writes plain CSV/JSON under one output directory.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dsi/assim.hpp"
#include "dsi/diag.hpp"
#include "dsi/io.hpp"
#include "dsi/latent.hpp"
#include "dsi/pcaht.hpp"
#include "dsi/rae/network.hpp"
#include "dsi/rs.hpp"
#include "dsi/synth.hpp"

namespace dsi::pipeline {

namespace fs = std::filesystem;
using json = io::json;
using Logger = std::function<void(const std::string&)>;

/// Built-in defaults; user configs are merged on top (RFC 7396 merge patch,
/// so `null` removes a section).
inline json default_config() {
  return json::parse(R"({
    "seed": 20240917,
    "seeds": {},
    "output_dir": "dsi_run",
    "forward_model": {
      "type": "tank",
      "n_r": 800,
      "schema": {"t_start": 30, "t_step": 30, "n_t": 100}
    },
    "observations": {
      "quantities": ["I1_WIR", "I2_WIR", "P3_WPR", "P3_OPR"],
      "times": [180, 360, 540],
      "error_fraction": 0.1
    },
    "parameterizations": {
      "pca_ht": {"n_latent": 31, "histogram_transform": true},
      "rae": {"n_latent": 31, "n_hidden": 32, "epochs": 120, "batch_size": 16,
              "learning_rate": 0.003, "clip_norm": 5.0, "orthogonal_init": true}
    },
    "samplers": [
      {"name": "rae_esmda", "method": "esmda", "parameterization": "rae", "n_a": 4},
      {"name": "pca_ht_rml", "method": "rml", "parameterization": "pca_ht", "n_samples": 100,
       "learning_rate": 0.05, "max_iterations": 500},
      {"name": "esmda_trunc", "method": "esmda", "parameterization": "none", "n_a": 4, "truncate": true}
    ],
    "rs": {"n_prior": 100000, "chunk": 10000},
    "diagnostics": {
      "quantiles": [0.1, 0.5, 0.9],
      "derived": "standard",
      "division_policy": "null",
      "mahalanobis_energy": 0.99,
      "reference": "rs",
      "balance_after": 600,
      "crossplots": [{"quantity": "P1_WPR", "time_a": 540, "time_b": 1800},
                     {"quantity": "P2_WPR", "time_a": 540, "time_b": 1800}],
      "corr_cov": [["P1_WPR", "P2_WPR"], ["FIELD_WIR", "FIELD_LIQ"]]
    }
  })");
}

// ---------------------------------------------------------------------------
// Config access
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError("missing " + where + "." + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for " + where + "." + key + ": " + e.what());
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) return fallback;
  return get<T>(j, key, where);
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

inline Matrix matrix_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(where + " must be an array of rows");
  Matrix m(static_cast<Index>(j.size()), static_cast<Index>(j[0].size()));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != j[0].size()) throw ConfigError(where + " rows differ in length");
    for (std::size_t c = 0; c < j[r].size(); ++c)
      m(static_cast<Index>(r), static_cast<Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace detail

class RunConfig {
 public:
  /// Merges `user` over the defaults and validates the result.
  explicit RunConfig(const json& user = json::object()) : j_(default_config()) {
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    j_.merge_patch(user);
    validate();
  }

  static RunConfig from_file(const fs::path& path) {
    json j;
    try {
      j = io::read_json(path);
    } catch (const IoError& e) {
      throw ConfigError(std::string("cannot parse config: ") + e.what());
    } catch (const MissingArtifactError&) {
      throw ConfigError("config file not found: " + path.string());
    }
    return RunConfig(j);
  }

  const json& raw() const { return j_; }

  std::uint64_t master_seed() const { return j_.at("seed").get<std::uint64_t>(); }

  /// `--seed`: new master seed, explicit per-stage seeds dropped.
  void override_seed(std::uint64_t seed) {
    j_["seed"] = seed;
    j_["seeds"] = json::object();
  }

  fs::path output_dir() const { return j_.at("output_dir").get<std::string>(); }
  void set_output_dir(const fs::path& p) { j_["output_dir"] = p.string(); }

  /// Explicit `seeds.<tag>` or derive_seed(master, hash(tag)).
  std::uint64_t seed(const std::string& tag) const {
    const auto& s = j_.at("seeds");
    if (s.contains(tag)) return detail::get<std::uint64_t>(s, tag.c_str(), "seeds");
    return derive_seed(master_seed(), detail::fnv1a(tag));
  }

  std::vector<std::string> stochastic_stages() const {
    std::vector<std::string> tags{"prior", "truth", "observation_noise", "rs_prior", "rs"};
    if (has_parameterization("rae")) tags.emplace_back("rae");
    for (const auto& s : samplers()) tags.push_back(s.at("name").get<std::string>());
    return tags;
  }

  json seed_table() const {
    json out = json::object();
    for (const auto& t : stochastic_stages()) out[t] = seed(t);
    return out;
  }

  const json& forward() const { return j_.at("forward_model"); }
  const json& observations() const { return j_.at("observations"); }
  const json& diagnostics() const { return j_.at("diagnostics"); }
  const json& rs() const { return j_.at("rs"); }

  bool has_parameterization(const std::string& name) const {
    const auto& p = j_.at("parameterizations");
    return p.contains(name) && !p.at(name).is_null();
  }
  const json& parameterization(const std::string& name) const {
    if (!has_parameterization(name)) throw ConfigError("parameterization '" + name + "' is not configured");
    return j_.at("parameterizations").at(name);
  }
  std::vector<std::string> parameterization_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : j_.at("parameterizations").items())
      if (!v.is_null()) out.push_back(k);
    return out;
  }

  std::vector<json> samplers() const {
    std::vector<json> out;
    for (const auto& s : j_.at("samplers")) out.push_back(s);
    return out;
  }
  json sampler(const std::string& name) const {
    for (const auto& s : j_.at("samplers"))
      if (s.at("name") == name) return s;
    throw ConfigError("unknown sampler '" + name + "'");
  }

  /// Applies "/json/pointer=value"; value parsed as JSON, else taken as a string.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || assignment.empty() || assignment[0] != '/')
      throw ConfigError("override must look like /path/to/key=value: " + assignment);
    const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    RunConfig next = *this;
    try {
      next.j_[json::json_pointer(path)] = value;
    } catch (const json::exception& e) {
      throw ConfigError("bad override " + assignment + ": " + e.what());
    }
    next.validate();
    *this = std::move(next);
  }

  void validate() const;

 private:
  json j_;
};

// ---------------------------------------------------------------------------
// Forward models
// ---------------------------------------------------------------------------

/// Prior ensemble generator, regenerable member by member from (seed, id).
struct ForwardModel {
  SchemaPtr schema;
  std::function<Ensemble(Index n, std::uint64_t seed, std::uint64_t first_id)> generate;
  std::function<DataVector(std::uint64_t seed)> truth;
  bool rates = false;  // outputs are nonnegative rates
};

inline synth::LinearGaussianModel linear_model(const json& f) {
  const std::string w = "forward_model";
  synth::LinearGaussianModel m;
  m.schema = make_schema(detail::get<std::vector<std::string>>(f, "quantities", w),
                         detail::get<std::vector<double>>(f, "times", w));
  if (!f.contains("forward")) throw ConfigError("missing forward_model.forward");
  m.forward = detail::matrix_from_json(f.at("forward"), w + ".forward");
  m.prior_mean = io::vector_from_json(f.at("prior_mean"));
  m.prior_cov = detail::matrix_from_json(f.at("prior_cov"), w + ".prior_cov");
  m.validate();
  return m;
}

inline ForwardModel make_forward_model(const RunConfig& cfg) {
  const auto& f = cfg.forward();
  const auto type = detail::get<std::string>(f, "type", "forward_model");
  ForwardModel out;
  if (type == "tank") {
    const auto prior = f.value("prior", json::object()).get<synth::TankPriorConfig>();
    const json sch = f.value("schema", json::object());
    out.schema = synth::tank_schema(prior.n_inj, prior.n_prod, detail::get_or<double>(sch, "t_start", 30.0, "schema"),
                                    detail::get_or<double>(sch, "t_step", 30.0, "schema"),
                                    detail::get_or<Index>(sch, "n_t", 100, "schema"));
    {
      Rng probe(0);
      synth::sample_tank_params(prior, probe);  // range validation
    }
    auto schema = out.schema;
    out.generate = [prior, schema](Index n, std::uint64_t seed, std::uint64_t first) {
      return synth::generate_tank_ensemble(prior, schema, n, seed, first);
    };
    out.truth = [prior, schema](std::uint64_t seed) {
      Rng rng(seed);
      return synth::simulate_tank(synth::sample_tank_params(prior, rng), schema);
    };
    out.rates = true;
  } else if (type == "linear") {
    auto model = std::make_shared<const synth::LinearGaussianModel>(linear_model(f));
    out.schema = model->schema;
    out.generate = [model](Index n, std::uint64_t seed, std::uint64_t first) {
      return synth::generate_linear_ensemble(*model, n, seed, first);
    };
    out.truth = [model](std::uint64_t seed) { return synth::generate_linear_ensemble(*model, 1, seed).member(0); };
  } else {
    throw ConfigError("forward_model.type must be 'tank' or 'linear', got '" + type + "'");
  }
  return out;
}

inline std::vector<ObservationEntry> observation_entries(const RunConfig& cfg, const DataSchema& s) {
  const auto& o = cfg.observations();
  std::vector<ObservationEntry> out;
  auto resolve = [&](const std::string& q, double t) {
    try {
      out.push_back({s.quantity_index(q), s.time_index(t)});
    } catch (const SchemaError& e) {
      throw ConfigError(std::string("observation entry does not resolve: ") + e.what());
    }
  };
  if (o.contains("entries") && !o.at("entries").is_null()) {
    for (const auto& e : o.at("entries")) {
      if (!e.is_array() || e.size() != 2) throw ConfigError("observations.entries items must be [quantity, time]");
      resolve(e[0].get<std::string>(), e[1].get<double>());
    }
  } else {
    for (const auto& q : detail::get<std::vector<std::string>>(o, "quantities", "observations"))
      for (double t : detail::get<std::vector<double>>(o, "times", "observations")) resolve(q, t);
  }
  if (out.empty()) throw ConfigError("no observations configured");
  if (std::set<ObservationEntry>(out.begin(), out.end()).size() != out.size())
    throw ConfigError("duplicate observation entry");
  return out;
}

inline void RunConfig::validate() const {
  const std::string w = "config";
  if (!j_.contains("seed") || !j_.at("seed").is_number_unsigned()) throw ConfigError("seed must be a nonnegative integer");
  if (!j_.at("seeds").is_object()) throw ConfigError("seeds must be an object");
  for (const auto& [k, v] : j_.at("seeds").items())
    if (!v.is_number_unsigned()) throw ConfigError("seeds." + k + " must be a nonnegative integer");
  detail::get<std::string>(j_, "output_dir", w);

  const auto fm = make_forward_model(*this);
  const Index n_r = detail::get<Index>(forward(), "n_r", "forward_model");
  if (n_r < 2) throw ConfigError("forward_model.n_r must be at least 2");
  observation_entries(*this, *fm.schema);
  if (!(detail::get<double>(observations(), "error_fraction", "observations") >= 0.0))
    throw ConfigError("observations.error_fraction must be nonnegative");

  for (const auto& name : parameterization_names()) {
    const auto& p = parameterization(name);
    if (name == "pca_ht") {
      const bool by_count = p.contains("n_latent") && !p.at("n_latent").is_null();
      const bool by_energy = p.contains("energy") && !p.at("energy").is_null();
      if (by_count == by_energy) throw ConfigError("pca_ht needs exactly one of n_latent or energy");
    } else if (name != "rae") {
      throw ConfigError("unknown parameterization '" + name + "'");
    }
  }

  std::vector<std::string> names;
  for (const auto& s : samplers()) {
    const auto name = detail::get<std::string>(s, "name", "sampler");
    if (name.empty() || name == "rs" || name == "prior" || name.find('/') != std::string::npos)
      throw ConfigError("invalid sampler name '" + name + "'");
    if (std::find(names.begin(), names.end(), name) != names.end())
      throw ConfigError("duplicate sampler name '" + name + "'");
    names.push_back(name);
    const auto method = detail::get<std::string>(s, "method", "sampler " + name);
    const auto param = detail::get_or<std::string>(s, "parameterization", "none", "sampler " + name);
    if (param != "none" && !has_parameterization(param))
      throw ConfigError("sampler '" + name + "' references unconfigured parameterization '" + param + "'");
    if (method == "esmda") {
      if (s.contains("alphas")) assim::EsmdaConfig{detail::get<std::vector<double>>(s, "alphas", name), 0}.validate();
      else assim::default_alphas(detail::get_or<Index>(s, "n_a", 4, name));
    } else if (method == "rml") {
      if (param == "none") throw ConfigError("rml sampler '" + name + "' needs a latent parameterization");
      if (detail::get_or<Index>(s, "n_samples", 100, name) < 1) throw ConfigError("rml n_samples must be positive");
    } else {
      throw ConfigError("sampler '" + name + "' has unknown method '" + method + "'");
    }
  }

  if (detail::get<Index>(rs(), "n_prior", "rs") < 1 || detail::get<Index>(rs(), "chunk", "rs") < 1)
    throw ConfigError("rs.n_prior and rs.chunk must be positive");

  const auto& d = diagnostics();
  for (double p : detail::get<std::vector<double>>(d, "quantiles", "diagnostics"))
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile probabilities must lie in [0, 1]");
  const double energy = detail::get<double>(d, "mahalanobis_energy", "diagnostics");
  if (!(energy > 0.0 && energy <= 1.0)) throw ConfigError("mahalanobis_energy must lie in (0, 1]");
  const auto ref = detail::get<std::string>(d, "reference", "diagnostics");
  if (ref != "rs" && ref != "prior" && std::find(names.begin(), names.end(), ref) == names.end())
    throw ConfigError("diagnostics.reference '" + ref + "' does not name an ensemble");
  const auto policy = detail::get_or<std::string>(d, "division_policy", "null", "diagnostics");
  if (policy != "null" && policy != "clamp") throw ConfigError("division_policy must be 'null' or 'clamp'");
}

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

struct Layout {
  fs::path root;

  fs::path prior_dir() const { return root / "prior"; }
  fs::path prior_ensemble() const { return prior_dir() / "ensemble.csv"; }
  fs::path truth() const { return prior_dir() / "truth.csv"; }
  fs::path observations() const { return prior_dir() / "observations.json"; }
  fs::path param_dir(const std::string& name) const { return root / "param" / name; }
  fs::path latent_prior(const std::string& name) const { return param_dir(name) / "latent_prior.csv"; }
  fs::path posterior_dir(const std::string& name) const { return root / "posterior" / name; }
  fs::path posterior(const std::string& name) const { return posterior_dir(name) / "ensemble.csv"; }
  fs::path rs_dir() const { return root / "rs"; }
  fs::path rs_accepted() const { return rs_dir() / "accepted.csv"; }
  fs::path evaluate_dir() const { return root / "evaluate"; }
};

namespace detail {

inline void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) throw MissingArtifactError("missing " + p.string() + " (run '" + stage + "' first)");
}

// The output directory is left out so that relocated runs stay byte-identical.
inline json manifest(const RunConfig& cfg, const std::string& stage) {
  json c = cfg.raw();
  c.erase("output_dir");
  return {{"stage", stage}, {"seeds", cfg.seed_table()}, {"config", c}};
}

inline json diagnostics_json(const std::vector<assim::IterationDiagnostics>& diags) {
  json out = json::array();
  for (const auto& d : diags)
    out.push_back({{"iteration", d.iteration}, {"alpha", d.alpha}, {"mean_mismatch", d.mean_mismatch}});
  return out;
}

inline void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

inline diag::DivisionPolicy division_policy(const RunConfig& cfg) {
  return cfg.diagnostics().value("division_policy", "null") == "clamp" ? diag::DivisionPolicy::clamp
                                                                         : diag::DivisionPolicy::null_marker;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// prior/ensemble.csv, prior/truth.csv (a fresh draw outside the prior set)
/// and prior/observations.json with error_std = fraction * |truth|.
inline void generate_prior(const RunConfig& cfg, const Logger& log = {}) {
  const Layout out{cfg.output_dir()};
  const auto fm = make_forward_model(cfg);
  const Index n_r = cfg.forward().at("n_r").get<Index>();
  detail::say(log, "generating " + std::to_string(n_r) + " prior members");
  const auto prior = fm.generate(n_r, cfg.seed("prior"), 0);
  const auto truth = fm.truth(cfg.seed("truth"));
  const auto entries = observation_entries(cfg, *fm.schema);
  const ObservationSet exact(entries, Vector::Zero(static_cast<Index>(entries.size())),
                             Vector::Zero(static_cast<Index>(entries.size())));
  const Vector true_values = select_hm(truth, exact);
  const Vector error_std = cfg.observations().at("error_fraction").get<double>() * true_values.cwiseAbs();
  Rng rng(cfg.seed("observation_noise"));
  const Vector d_obs = perturb_observations(ObservationSet(entries, true_values, error_std), rng);
  const ObservationSet obs(entries, d_obs, error_std);

  io::write_ensemble_csv(out.prior_ensemble(), prior);
  io::write_data_vector_csv(out.truth(), truth);
  io::write_observations(out.observations(), obs);
  auto m = detail::manifest(cfg, "generate-prior");
  m["n_r"] = n_r;
  m["n_f"] = fm.schema->n_f();
  m["n_obs"] = obs.size();
  m["true_values"] = io::to_json(true_values);
  io::write_json(out.prior_dir() / "manifest.json", m);
}

inline void train_pca_ht(const RunConfig& cfg, const Ensemble& prior, const Logger& log) {
  const Layout out{cfg.output_dir()};
  const auto& p = cfg.parameterization("pca_ht");
  const auto trunc = p.contains("n_latent") && !p.at("n_latent").is_null()
                         ? pcaht::Truncation::explicit_count(p.at("n_latent").get<Index>())
                         : pcaht::Truncation::by_energy(p.at("energy").get<double>());
  auto model = std::make_shared<pcaht::PcaHtModel>();
  model->basis = pcaht::fit_pca(prior, trunc);
  if (p.value("histogram_transform", true)) model->table = pcaht::fit_ht(prior, model->basis);
  detail::say(log, "pca_ht: " + std::to_string(model->basis.n_latent()) + " components");
  pcaht::save(out.param_dir("pca_ht"), *model);
  write_latent_csv(out.latent_prior("pca_ht"), encode_prior(*model, prior));
  auto m = detail::manifest(cfg, "train");
  m["parameterization"] = "pca_ht";
  m["n_latent"] = model->basis.n_latent();
  m["retained_energy"] = stats::retained_energy(model->basis.singular_values, model->basis.n_latent());
  m["histogram_transform"] = model->table.has_value();
  io::write_json(out.param_dir("pca_ht") / "manifest.json", m);
}

inline rae::TrainConfig rae_train_config(const RunConfig& cfg) {
  const auto& p = cfg.parameterization("rae");
  const std::string w = "parameterizations.rae";
  rae::TrainConfig t;
  t.n_latent = detail::get_or<Index>(p, "n_latent", t.n_latent, w);
  t.n_hidden = detail::get_or<Index>(p, "n_hidden", t.n_hidden, w);
  t.epochs = detail::get_or<Index>(p, "epochs", t.epochs, w);
  t.batch_size = detail::get_or<Index>(p, "batch_size", t.batch_size, w);
  t.learning_rate = detail::get_or<double>(p, "learning_rate", t.learning_rate, w);
  t.clip_norm = detail::get_or<double>(p, "clip_norm", t.clip_norm, w);
  t.orthogonal_init = detail::get_or<bool>(p, "orthogonal_init", t.orthogonal_init, w);
  t.seed = cfg.seed("rae");
  if (t.n_latent < 1 || t.n_hidden < 1) throw ConfigError("RAE sizes must be positive");
  return t;
}

inline void train_rae(const RunConfig& cfg, const Ensemble& prior, const Logger& log) {
  const Layout out{cfg.output_dir()};
  const auto t = rae_train_config(cfg);
  detail::say(log, "rae: training " + std::to_string(t.epochs) + " epochs, N_h " + std::to_string(t.n_hidden) +
                       ", N_l " + std::to_string(t.n_latent));
  const auto result = rae::train_rae(prior, t, [&](Index epoch, double loss) {
    if ((epoch + 1) % 10 == 0 || epoch + 1 == t.epochs)
      detail::say(log, "rae: epoch " + std::to_string(epoch + 1) + " loss " + io::format_double(loss));
  });
  const json hyper = {{"epochs", t.epochs},         {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
                      {"clip_norm", t.clip_norm},   {"seed", t.seed},             {"orthogonal_init", t.orthogonal_init}};
  rae::save(out.param_dir("rae"), result.weights, hyper);
  write_latent_csv(out.latent_prior("rae"), encode_prior(result.weights, prior));
  {
    auto f = io::open_for_write(out.param_dir("rae") / "loss_history.csv");
    f << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_history.size(); ++e)
      f << e + 1 << ',' << io::format_double(result.loss_history[e]) << '\n';
  }
  auto m = detail::manifest(cfg, "train");
  m["parameterization"] = "rae";
  m["n_latent"] = t.n_latent;
  m["parameter_count"] = rae::parameter_count(result.weights);
  m["final_loss"] = result.loss_history.empty() ? json(nullptr) : json(result.loss_history.back());
  io::write_json(out.param_dir("rae") / "manifest.json", m);
}

/// Fits every configured parameterization, or only `only` if given.
inline void train(const RunConfig& cfg, const std::string& only = {}, const Logger& log = {}) {
  const Layout out{cfg.output_dir()};
  detail::require(out.prior_ensemble(), "generate-prior");
  const auto prior = io::read_ensemble_csv(out.prior_ensemble());
  const auto names = only.empty() ? cfg.parameterization_names() : std::vector<std::string>{only};
  for (const auto& name : names) {
    if (name == "pca_ht") train_pca_ht(cfg, prior, log);
    else if (name == "rae") {
      cfg.parameterization("rae");
      train_rae(cfg, prior, log);
    } else throw ConfigError("unknown parameterization '" + name + "'");
  }
}

inline assim::LatentDecoder load_decoder(const RunConfig& cfg, const std::string& name, const SchemaPtr& schema) {
  const Layout out{cfg.output_dir()};
  if (name == "pca_ht") {
    detail::require(out.param_dir(name) / "pca_basis.json", "train");
    return make_decoder(std::make_shared<const pcaht::PcaHtModel>(pcaht::load(out.param_dir(name))));
  }
  if (name == "rae") {
    detail::require(out.param_dir(name) / "rae_weights.json", "train");
    return make_decoder(std::make_shared<const rae::RaeWeights>(rae::load(out.param_dir(name))), schema);
  }
  throw ConfigError("unknown parameterization '" + name + "'");
}

inline void assimilate_one(const RunConfig& cfg, const json& s, const Logger& log) {
  const Layout out{cfg.output_dir()};
  const auto name = s.at("name").get<std::string>();
  const auto method = s.at("method").get<std::string>();
  const auto param = s.value("parameterization", "none");
  detail::require(out.prior_ensemble(), "generate-prior");
  detail::require(out.observations(), "generate-prior");
  const auto prior = io::read_ensemble_csv(out.prior_ensemble());
  const auto obs = io::read_observations(out.observations());
  obs.flat_indices(*prior.schema());
  const std::uint64_t seed = cfg.seed(name);
  detail::say(log, "assimilate: " + name + " (" + method + ", " + param + ")");

  auto m = detail::manifest(cfg, "assimilate");
  m["sampler"] = s;
  m["seed"] = seed;
  Ensemble posterior;
  std::optional<assim::LatentEnsemble> latent;
  if (method == "esmda") {
    const assim::EsmdaConfig ec{s.contains("alphas") ? s.at("alphas").get<std::vector<double>>()
                                                     : assim::default_alphas(s.value("n_a", Index{4})),
                                seed};
    m["alphas"] = ec.alphas;
    if (param == "none") {
      auto r = assim::esmda_update_data(prior, obs, ec);
      posterior = std::move(r.posterior);
      m["iterations"] = detail::diagnostics_json(r.diagnostics);
    } else {
      detail::require(out.latent_prior(param), "train");
      const auto dec = load_decoder(cfg, param, prior.schema());
      auto r = assim::esmda_update_latent(read_latent_csv(out.latent_prior(param)), dec, obs, ec);
      posterior = std::move(r.posterior);
      latent = std::move(r.latent);
      m["iterations"] = detail::diagnostics_json(r.diagnostics);
    }
  } else {
    const auto dec = load_decoder(cfg, param, prior.schema());
    assim::RmlConfig rc;
    rc.adam.learning_rate = s.value("learning_rate", rc.adam.learning_rate);
    rc.max_iterations = s.value("max_iterations", rc.max_iterations);
    rc.fd_step = s.value("fd_step", rc.fd_step);
    const Index n = s.value("n_samples", Index{100});
    auto r = assim::rml_ensemble(n, dec, obs, seed, param, rc);
    posterior = std::move(r.posterior);
    latent = std::move(r.latent);
    m["iterations"] = detail::diagnostics_json(r.diagnostics);
  }
  if (s.value("truncate", false)) {
    const auto& sch = *posterior.schema();
    assim::Bounds b{Vector::Constant(sch.n_qoi(), s.value("lower_bound", 0.0)),
                    Vector::Constant(sch.n_qoi(), std::numeric_limits<double>::infinity())};
    posterior = assim::truncate(posterior, b);
  }
  fs::remove_all(out.posterior_dir(name));
  io::write_ensemble_csv(out.posterior(name), posterior);
  if (latent) write_latent_csv(out.posterior_dir(name) / "latent.csv", *latent);
  m["n_members"] = posterior.size();
  io::write_json(out.posterior_dir(name) / "manifest.json", m);
}

/// Runs every configured sampler, or only `only` if given.
inline void assimilate(const RunConfig& cfg, const std::string& only = {}, const Logger& log = {}) {
  if (!only.empty()) return assimilate_one(cfg, cfg.sampler(only), log);
  for (const auto& s : cfg.samplers()) assimilate_one(cfg, s, log);
}

/// Streams a large prior in chunks, keeps only each proposal's data mismatch,
/// then regenerates the accepted members by id.
inline void run_rs(const RunConfig& cfg, const Logger& log = {}) {
  const Layout out{cfg.output_dir()};
  detail::require(out.observations(), "generate-prior");
  const auto obs = io::read_observations(out.observations());
  const auto fm = make_forward_model(cfg);
  obs.flat_indices(*fm.schema);
  obs.require_positive_errors();
  const Index n = cfg.rs().at("n_prior").get<Index>(), chunk = cfg.rs().at("chunk").get<Index>();
  const std::uint64_t prior_seed = cfg.seed("rs_prior"), seed = cfg.seed("rs");
  detail::say(log, "rs: " + std::to_string(n) + " proposals");
  Vector mismatch(n);
  std::vector<std::uint64_t> ids(static_cast<std::size_t>(n));
  for (Index start = 0; start < n; start += chunk) {
    const Index len = std::min(chunk, n - start);
    const auto block = fm.generate(len, prior_seed, static_cast<std::uint64_t>(start));
    mismatch.segment(start, len) = rs::data_mismatch(block, obs);
    std::copy(block.ids().begin(), block.ids().end(), ids.begin() + start);
  }
  const auto r = rs::rejection_sample_mismatch(mismatch, ids, seed);
  if (r.accepted.empty())
    throw NumericalError("no samples accepted out of " + std::to_string(n) +
                         " proposals; use a larger RS prior (rs.n_prior) or inflate the observation errors");
  Matrix acc(fm.schema->n_f(), static_cast<Index>(r.accepted.size()));
  std::vector<std::uint64_t> acc_ids;
  for (std::size_t k = 0; k < r.accepted.size(); ++k) {
    const auto id = ids[static_cast<std::size_t>(r.accepted[k])];
    acc.col(static_cast<Index>(k)) = fm.generate(1, prior_seed, id).matrix().col(0);
    acc_ids.push_back(id);
  }
  detail::say(log, "rs: accepted " + std::to_string(acc_ids.size()));
  io::write_ensemble_csv(out.rs_accepted(), Ensemble(fm.schema, std::move(acc), acc_ids));
  auto m = detail::manifest(cfg, "rs");
  m["proposals"] = n;
  m["accepted"] = acc_ids.size();
  m["min_mismatch"] = r.min_mismatch;
  m["prior_seed"] = prior_seed;
  m["seed"] = seed;
  io::write_json(out.rs_dir() / "manifest.json", m);
}

/// KS of every sampler's D_M distribution against the reference, ascending.
inline std::vector<std::string> rank_by_ks(const std::map<std::string, double>& ks, const std::vector<std::string>& names) {
  std::vector<std::string> out = names;
  std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) { return ks.at(a) < ks.at(b); });
  return out;
}

inline json evaluate(const RunConfig& cfg, const Logger& log = {}) {
  const Layout out{cfg.output_dir()};
  const auto& d = cfg.diagnostics();
  detail::require(out.prior_ensemble(), "generate-prior");
  std::map<std::string, Ensemble> ens;
  ens.emplace("prior", io::read_ensemble_csv(out.prior_ensemble()));
  std::vector<std::string> samplers;
  for (const auto& s : cfg.samplers()) {
    const auto name = s.at("name").get<std::string>();
    detail::require(out.posterior(name), "assimilate");
    ens.emplace(name, io::read_ensemble_csv(out.posterior(name)));
    samplers.push_back(name);
  }
  detail::require(out.rs_accepted(), "rs");
  ens.emplace("rs", io::read_ensemble_csv(out.rs_accepted()));
  const auto schema = ens.at("prior").schema();
  for (const auto& [name, e] : ens)
    if (*e.schema() != *schema) throw SchemaError("ensemble '" + name + "' has a different schema");

  const auto ref = d.at("reference").get<std::string>();
  if (ens.at(ref).size() < 2)
    throw NumericalError("reference ensemble '" + ref + "' has " + std::to_string(ens.at(ref).size()) +
                         " member(s); D_M needs at least two (enlarge the RS prior or inflate observation errors)");

  const auto dir = out.evaluate_dir();
  fs::remove_all(dir);
  const auto probs = d.at("quantiles").get<std::vector<double>>();
  const auto policy = detail::division_policy(cfg);
  std::vector<std::string> defs;
  if (d.contains("derived") && d.at("derived").is_string() && d.at("derived") == "standard") defs = diag::standard_derived(*schema);
  else if (d.contains("derived") && d.at("derived").is_array()) defs = d.at("derived").get<std::vector<std::string>>();

  std::map<std::string, Ensemble> derived;
  for (const auto& [name, e] : ens) {
    diag::write_bands_csv(dir / ("bands_" + name + ".csv"), e, probs);
    if (!defs.empty()) {
      derived.emplace(name, diag::derived_quantities(e, defs, policy));
      diag::write_bands_csv(dir / ("derived_bands_" + name + ".csv"), derived.at(name), probs);
    }
    for (const auto& c : d.value("crossplots", json::array()))
      diag::write_crossplot_csv(dir / ("crossplot_" + name + "_" + c.at("quantity").get<std::string>() + ".csv"), e,
                                c.at("quantity").get<std::string>(), c.at("time_a").get<double>(),
                                c.at("time_b").get<double>());
    for (const auto& pair : d.value("corr_cov", json::array())) {
      const auto a = pair.at(0).get<std::string>(), b = pair.at(1).get<std::string>();
      const auto& names = schema->quantity_names();
      const bool primary = std::find(names.begin(), names.end(), a) != names.end() &&
                           std::find(names.begin(), names.end(), b) != names.end();
      if (!primary && !derived.contains(name)) throw ConfigError("corr_cov pair " + a + "," + b + " needs derived quantities");
      const auto& src = primary ? e : derived.at(name);
      diag::write_corr_cov_csv(dir / ("corr_cov_" + name + "_" + a + "_" + b + ".csv"), *src.schema(),
                               diag::corr_cov_series(src, a, b));
    }
  }

  detail::say(log, "evaluate: D_M against " + ref);
  const auto basis = diag::fit_mahalanobis(ens.at(ref), d.at("mahalanobis_energy").get<double>());
  const auto cmp = diag::dm_cdf_compare(basis, ens, ref);
  diag::write_dm_cdf_csv(dir / "dm_cdf.csv", cmp);

  json summary;
  summary["reference"] = ref;
  summary["k"] = basis.k;
  summary["retained_energy"] = basis.retained_energy;
  summary["ks"] = cmp.ks_vs_reference;
  std::vector<std::string> ranked;
  for (const auto& s : samplers)
    if (s != ref) ranked.push_back(s);
  summary["ranking"] = rank_by_ks(cmp.ks_vs_reference, ranked);
  json members, balance;
  const double after = d.value("balance_after", 0.0);
  for (const auto& [name, e] : ens) {
    members[name] = e.size();
    try {
      const auto fb = diag::field_balance(e, after);
      balance[name] = {{"mean_difference", fb.mean_difference}, {"mean_rate", fb.mean_rate}, {"relative", fb.relative()}};
    } catch (const ConfigError&) {
      // no injector/producer quantities
    }
  }
  summary["members"] = members;
  if (!balance.is_null()) summary["field_balance"] = balance;
  io::write_json(dir / "summary.json", summary);
  return summary;
}

inline json run_all(const RunConfig& cfg, const Logger& log = {}) {
  generate_prior(cfg, log);
  train(cfg, {}, log);
  assimilate(cfg, {}, log);
  run_rs(cfg, log);
  return evaluate(cfg, log);
}

}  // namespace dsi::pipeline
