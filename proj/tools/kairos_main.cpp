#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kairos/checkpoint.hpp"
#include "kairos/encoder.hpp"
#include "kairos/error.hpp"
#include "kairos/metrics.hpp"
#include "kairos/pipeline.hpp"

namespace {

using kairos::pipeline::RunConfig;

struct RunOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;

  RunConfig load() const {
    return kairos::pipeline::load_run_config(
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path),
        overrides,
        out_dir.empty() ? std::nullopt : std::optional<std::filesystem::path>(out_dir));
  }
};

void add_run_options(CLI::App* cmd, RunOptions& opts) {
  cmd->add_option("--config", opts.config_path, "Run configuration (JSON)");
  cmd->add_option("--set", opts.overrides, "Override a config leaf, e.g. --set train.epochs=50")
      ->take_all();
  cmd->add_option("--out", opts.out_dir, "Output directory (overrides output_dir)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kairos: image-level anomaly detection with a frozen encoder and a trained head"};
  app.require_subcommand(1);

  RunOptions embed_opts, train_opts, eval_opts, bench_opts;
  auto* embed = app.add_subcommand("embed", "Encode every dataset image into an embedding cache");
  add_run_options(embed, embed_opts);
  auto* train = app.add_subcommand("train", "Train the scoring head on cached embeddings");
  add_run_options(train, train_opts);
  auto* eval = app.add_subcommand("eval", "Score the eval split and write an AUROC report");
  add_run_options(eval, eval_opts);
  auto* bench = app.add_subcommand("bench", "Measure single-image latency and parameter counts");
  add_run_options(bench, bench_opts);

  std::string init_config = "tiny-test";
  std::uint64_t init_seed = 0;
  std::string init_out;
  auto* init = app.add_subcommand("init-weights", "Write a seeded random encoder container");
  init->add_option("--encoder-config", init_config, "Named encoder config")
      ->check(CLI::IsMember(kairos::encoder::named_config_names()));
  init->add_option("--seed", init_seed, "Generator seed");
  init->add_option("--out", init_out, "Output container path")->required();

  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect", "List the entries and parameter count of a container");
  inspect->add_option("path", inspect_path, "Container path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage mistakes are configuration errors; --help exits 0.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*embed) {
      const auto path = kairos::pipeline::cmd_embed(embed_opts.load());
      std::cout << "wrote " << path.string() << "\n";
    } else if (*train) {
      const auto config = train_opts.load();
      kairos::pipeline::cmd_train(config);
      std::cout << "wrote " << config.head_path().string() << " and "
                << config.history_path().string() << "\n";
    } else if (*eval) {
      const auto config = eval_opts.load();
      const auto report = kairos::pipeline::cmd_eval(config);
      for (const auto& [cat, entry] : report["categories"].items()) {
        std::cout << cat << ": "
                  << (entry["degenerate"].get<bool>() ? std::string("degenerate (single class)")
                                                      : entry["auroc"].dump())
                  << "\n";
      }
      std::cout << "average: " << report["average_auroc"].dump() << "\n";
    } else if (*bench) {
      const auto config = bench_opts.load();
      const auto report = kairos::pipeline::cmd_bench(config);
      std::cout << "p50 " << report["p50_ms"].get<double>() << " ms, p90 "
                << report["p90_ms"].get<double>() << " ms, parameters "
                << report["parameters"]["total_millions"].get<std::string>() << " M\n";
    } else if (*init) {
      kairos::pipeline::write_random_encoder(init_config, init_seed, init_out);
      std::cout << "wrote " << init_out << "\n";
    } else if (*inspect) {
      std::size_t total = 0;
      for (const auto& e : kairos::checkpoint::read_entries(inspect_path)) {
        std::cout << e.name << " " << kairos::shape_to_string(e.shape) << "\n";
        total += e.length / sizeof(float);
      }
      std::cout << "parameters: " << total << " (" << kairos::metrics::format_millions(total)
                << " M)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kairos::pipeline::exit_code_for(e);
  }
  return 0;
}
