#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <singwave/cli.hpp>

// Usage:
//   singwave --config run.json [--out DIR] [--seed S] [--threads T]
//   singwave --suite [--out DIR] [--seed S] [--threads T]
int main(int argc, char** argv) {
  CLI::App app{"Singular-coefficient wave equation experiments"};
  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool suite = false;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output directory (overrides the configuration)");
  app.add_option("--seed", seed, "random seed (overrides the configuration)");
  app.add_option("--threads", threads, "worker threads (overrides the configuration)")->check(CLI::PositiveNumber);
  app.add_flag("--suite", suite, "run every acceptance criterion");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : singwave::kExitInvalidConfig;
  }

  if (suite) {
    return singwave::run_suite(out.value_or("singwave-suite"), seed.value_or(42), threads.value_or(1), std::cout)
        .status;
  }
  if (config_path.empty()) {
    std::cerr << "either --config or --suite is required\n" << app.help();
    return singwave::kExitInvalidConfig;
  }

  nlohmann::json j;
  try {
    std::ifstream is(config_path);
    is >> j;
  } catch (const nlohmann::json::parse_error& e) {
    std::cerr << "invalid configuration: " << config_path << " is not valid JSON: " << e.what() << "\n";
    return singwave::kExitInvalidConfig;
  }
  if (!j.is_object()) {
    std::cerr << "invalid configuration: top level must be an object\n";
    return singwave::kExitInvalidConfig;
  }
  if (out) j["output"] = *out;
  if (seed) j["seed"] = *seed;
  if (threads) j["threads"] = *threads;
  const auto res = singwave::run_json(j, std::cerr);
  if (res.status != singwave::kExitInvalidConfig && res.manifest.is_object()) {
    std::cout << res.manifest.dump(2) << "\n";
  }
  return res.status;
}
