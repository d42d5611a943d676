#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nvnmr/error.hpp"
#include "nvnmr/parallel.hpp"
#include "nvnmr/pipeline.hpp"

namespace {

// 0 ok, 1 assertion or golden mismatch, 2 invalid config, 3 any other failure
int fail(const std::exception& e) {
  std::cerr << nvnmr::error_record(e).dump(2) << '\n';
  return dynamic_cast<const nvnmr::ConfigError*>(&e) ? 2 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NV-center nanoscale NMR simulator and inversion toolkit"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, std::string("Worker cap (overrides ") + nvnmr::worker_env_var + ")");

  std::string config_path;
  std::string out_dir;
  bool no_timestamp = false;
  auto* run = app.add_subcommand("run", "Run the pipeline described by a config file");
  run->add_option("config", config_path, "Config JSON")->required();
  run->add_option("--out", out_dir, "Output root (default: the config's output.directory)");
  run->add_flag("--no-timestamp", no_timestamp, "Write to <out>/<name> instead of a timestamped directory");

  std::string golden_dir;
  bool bless = false;
  auto* verify = app.add_subcommand("verify", "Re-run bundled configs and compare peak tables to goldens");
  verify->add_option("dir", golden_dir, "Golden directory (configs live in its parent)")->required();
  verify->add_flag("--bless", bless, "Rewrite the goldens from fresh runs");

  auto* schema = app.add_subcommand("schema", "Print the config JSON schema");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) nvnmr::set_worker_override(threads);

  try {
    if (*schema) {
      std::cout << nvnmr::config_schema().dump(2) << '\n';
      return 0;
    }
    if (*run) {
      const auto config = nvnmr::load_config(config_path);
      nvnmr::RunOptions options;
      if (!out_dir.empty()) options.output_root = out_dir;
      if (no_timestamp) options.timestamped = false;
      const auto result = nvnmr::run_pipeline(config, options);
      std::cout << result.run_dir.string() << '\n';
      for (const auto& check : result.report["assertions"]) {
        std::cout << (check["passed"].get<bool>() ? "PASS " : "FAIL ") << check["name"].get<std::string>()
                  << " expected=" << check["expected"].dump() << " actual=" << check["actual"].dump() << '\n';
      }
      return result.assertions_passed ? 0 : 1;
    }
    if (*verify) {
      const auto result = nvnmr::verify_goldens(golden_dir, bless);
      for (const auto& name : result.checked) std::cout << (bless ? "blessed " : "checked ") << name << '\n';
      for (const auto& d : result.deviations) std::cout << "DEVIATION " << d << '\n';
      std::cout << (result.ok() ? "verify: PASS" : "verify: FAIL") << '\n';
      return result.ok() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return 0;
}
