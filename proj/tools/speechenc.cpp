// speechenc: runs one pipeline command from a JSON config.
//
//   speechenc <command> [--config run.json] [--seed N] [--threads N] [--out DIR]
//
// Exit codes: 0 success, 1 module error, 2 usage error or missing input.
// Errors are printed to stderr as {"error": ..., "command": ...}.

#include "speechenc/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int report_error(const std::string& command, const std::string& what, int code) {
  std::cerr << speechenc::json{{"error", what}, {"command", command}, {"exit_code", code}}.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  namespace pl = speechenc::pipeline;
  CLI::App app{"Voxel-wise encoding, variance partitioning, layer PCA and probing pipeline"};
  app.set_version_flag("--version", std::string(pl::kVersion));

  std::string command, config_path, out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<std::string> names;
  for (const auto& [name, fn] : pl::commands()) names.push_back(name);
  app.add_option("command", command, "Pipeline command")->required()->check(CLI::IsMember(names));
  app.add_option("-c,--config", config_path, "JSON run config");
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides config)");
  app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out_dir, "Output directory (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(command, e.what(), 2);
  }

  pl::RunContext ctx;
  try {
    if (!config_path.empty()) {
      if (!std::filesystem::exists(config_path)) return report_error(command, "config not found: " + config_path, 2);
      ctx.config = speechenc::read_json(config_path);
      if (!ctx.config.is_object()) return report_error(command, "config must be a JSON object", 2);
    }
    if (*seed_opt) ctx.config["seed"] = seed;
    if (*out_opt) ctx.config["out"] = out_dir;
    ctx.seed = pl::value_or<std::uint64_t>(ctx.config, "seed", 0);
    ctx.out = pl::value_or<std::string>(ctx.config, "out", "out");
    ctx.threads = threads;
    const auto run = pl::run_command(command, ctx);
    std::cout << (ctx.out / command / "run.json").string() << '\n';
  } catch (const pl::NotFound& e) {
    return report_error(command, e.what(), 2);
  } catch (const std::exception& e) {
    return report_error(command, e.what(), 1);
  }
  return 0;
}
