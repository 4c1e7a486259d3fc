#pragma once

// Command-line front end. Exit codes: 0 ok, 1 I/O failure, 2 configuration
// or schema error, 3 numerical failure, 4 missing artifact.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dsi/pipeline.hpp"

namespace dsi::cli {

enum ExitCode : int { ok = 0, io_failure = 1, config_error = 2, numerical_failure = 3, missing_artifact = 4 };

/// Output root precedence: --output, then $DSI_OUTPUT_ROOT, then the config.
inline constexpr const char* output_env = "DSI_OUTPUT_ROOT";

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Data-space inversion: prior generation, RAE/PCA parameterization, ESMDA/RML sampling and diagnostics",
               "dsi"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, output, only_param, only_sampler;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "run configuration JSON (defaults apply to missing keys)");
  app.add_option("--seed", seed, "master seed; replaces every per-stage seed");
  app.add_option("-o,--output", output, "output directory");
  app.add_option("--set", overrides, "override a config value: /json/pointer=value");
  app.add_flag("-q,--quiet", quiet, "no progress messages");

  auto* gen = app.add_subcommand("generate-prior", "write the prior ensemble, truth and observations");
  auto* train = app.add_subcommand("train", "fit PCA+HT and/or train the RAE on the prior");
  train->add_option("--only", only_param, "pca_ht or rae");
  auto* assim = app.add_subcommand("assimilate", "run the configured posterior samplers");
  assim->add_option("--sampler", only_sampler, "run only this sampler");
  auto* rs = app.add_subcommand("rs", "rejection-sampling reference posterior");
  auto* eval = app.add_subcommand("evaluate", "bands, cross-plots, correlation series, D_M CDFs and KS summary");
  auto* pipe = app.add_subcommand("pipeline", "all stages in order");
  auto* show = app.add_subcommand("show-config", "print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return config_error;
  }

  pipeline::Logger log;
  if (!quiet) log = [&err](const std::string& m) { err << "[dsi] " << m << std::endl; };

  try {
    auto cfg = config_path.empty() ? pipeline::RunConfig() : pipeline::RunConfig::from_file(config_path);
    for (const auto& o : overrides) cfg.set(o);
    if (seed) cfg.override_seed(*seed);
    if (!output.empty()) cfg.set_output_dir(output);
    else if (const char* env = std::getenv(output_env); env && *env) cfg.set_output_dir(env);

    if (*gen) pipeline::generate_prior(cfg, log);
    else if (*train) pipeline::train(cfg, only_param, log);
    else if (*assim) pipeline::assimilate(cfg, only_sampler, log);
    else if (*rs) pipeline::run_rs(cfg, log);
    else if (*eval) out << pipeline::evaluate(cfg, log).dump(2) << '\n';
    else if (*pipe) out << pipeline::run_all(cfg, log).dump(2) << '\n';
    else if (*show) out << cfg.raw().dump(2) << '\n';
    return ok;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return config_error;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return numerical_failure;
  } catch (const MissingArtifactError& e) {
    err << "missing artifact: " << e.what() << '\n';
    return missing_artifact;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return io_failure;
  }
}

}  // namespace dsi::cli
