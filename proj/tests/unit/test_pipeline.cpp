#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kairos/checkpoint.hpp"
#include "kairos/error.hpp"
#include "kairos/metrics.hpp"
#include "kairos/pipeline.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace pl = kairos::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = KAIROS_FIXTURES;
const std::string kCli = KAIROS_CLI;

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kairos_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

pl::RunConfig config_for(const fs::path& out, const fs::path& encoder) {
  return pl::run_config_from_json({{"output_dir", out.string()},
                                    {"dataset", {{"root", (kFixtures / "mini_mvtec").string()}}},
                                    {"encoder", {{"container", encoder.string()}}},
                                    {"bench", {{"warmup", 1}, {"iterations", 3}}}});
}

// Embedding set from the synthetic clusters, tagged train/eval.
pl::EmbeddingSet synthetic_set(std::size_t n_train, std::size_t n_eval, std::uint64_t seed) {
  const auto train = synthetic::gaussian_clusters(n_train, 32, 2.0, 9, seed);
  const auto eval = synthetic::gaussian_clusters(n_eval, 32, 2.0, 9, seed + 1);
  pl::EmbeddingSet set;
  set.encoder_config = "synthetic";
  set.pooling = "mean";
  set.seed = seed;
  set.train_fraction = 0.6;
  std::vector<float> rows(train.matrix.values());
  rows.insert(rows.end(), eval.matrix.values().begin(), eval.matrix.values().end());
  for (std::size_t i = 0; i < n_train + n_eval; ++i) {
    const bool is_train = i < n_train;
    const auto label = is_train ? train.labels[i] : eval.labels[i - n_train];
    set.samples.push_back({"s" + std::to_string(i), (i / 10) % 2 ? "alpha" : "beta", label,
                           is_train ? kairos::dataset::Split::kTrain : kairos::dataset::Split::kEval});
  }
  set.matrix = kairos::Tensor({n_train + n_eval, 32}, std::move(rows));
  return set;
}

// Writes a single-layer head computing w·e + b on 1-d embeddings.
void write_scalar_head(const fs::path& path, float w, float b) {
  kairos::head::HeadWeights hw;
  hw.layers.push_back({kairos::Tensor::from({1, 1}, {w}), kairos::Tensor::from({1}, {b})});
  kairos::checkpoint::TensorMap m;
  kairos::head::store(hw, m);
  kairos::checkpoint::write_container(
      m, {{kairos::head::kConfigMetadataKey, kairos::head::config_to_json({1, {}, 1})}}, path);
}

// Fixture sample list with a one-dimensional embedding equal to the label.
pl::EmbeddingSet label_embeddings() {
  const auto m = kairos::dataset::stratified_split(
      kairos::dataset::scan_dataset(kFixtures / "mini_mvtec", kairos::dataset::Layout::kMvtec), 0.6, 0);
  pl::EmbeddingSet set;
  set.encoder_config = "tiny-test";
  set.pooling = "mean";
  set.train_fraction = 0.6;
  std::vector<float> rows;
  for (const auto& r : m.samples()) {
    set.samples.push_back({r.id, r.category, r.label, r.split});
    rows.push_back(static_cast<float>(r.label));
  }
  set.matrix = kairos::Tensor({rows.size(), 1}, rows);
  return set;
}

}  // namespace

TEST(RunConfigTest, DefaultsAndOverrides) {
  const auto c = pl::run_config_from_json(json::object());
  EXPECT_EQ(c.train.epochs, 35u);
  EXPECT_EQ(c.train.learning_rate, 1e-2);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.head_layers, 2u);
  EXPECT_EQ(c.train_fraction, 0.6);
  EXPECT_EQ(c.encoder_config, "tiny-test");

  json user = json::object();
  pl::apply_override(user, "train.epochs=50");
  pl::apply_override(user, "head.num_layers=3");
  pl::apply_override(user, "dataset.layout=visa");
  pl::apply_override(user, "seed=9");
  const auto o = pl::run_config_from_json(user);
  EXPECT_EQ(o.train.epochs, 50u);
  EXPECT_EQ(o.head_layers, 3u);
  EXPECT_EQ(o.layout, kairos::dataset::Layout::kVisa);
  EXPECT_EQ(o.train.seed, 9u);
}

TEST(RunConfigTest, RejectsUnknownKeysAndBadValues) {
  json user = json::object();
  EXPECT_THROW(pl::apply_override(user, "train.epoch=5"), kairos::ConfigError);
  EXPECT_THROW(pl::apply_override(user, "novalue"), kairos::ConfigError);
  EXPECT_THROW(pl::run_config_from_json({{"bogus", 1}}), kairos::ConfigError);
  EXPECT_THROW(pl::run_config_from_json({{"train", {{"epochs", "many"}}}}), kairos::ConfigError);
  EXPECT_THROW(pl::run_config_from_json({{"dataset", {{"train_fraction", 1.0}}}}), kairos::ConfigError);
  EXPECT_THROW(pl::run_config_from_json({{"encoder", {{"pooling", "max"}}}}), kairos::ConfigError);
}

TEST(EmbeddingsTest, RoundTrip) {
  const auto dir = fresh_dir("emb_roundtrip");
  const auto set = synthetic_set(20, 10, 3);
  pl::write_embeddings(set, dir / "e.kair");
  const auto back = pl::read_embeddings(dir / "e.kair");
  EXPECT_EQ(back.samples, set.samples);
  EXPECT_EQ(back.matrix, set.matrix);
  EXPECT_EQ(back.seed, 3u);
  EXPECT_EQ(back.select(kairos::dataset::Split::kEval).samples.size(), 10u);
}

TEST(EmbedTest, MiniFixtureGivesTwelveEntriesAndIsDeterministic) {
  const auto dir = fresh_dir("embed");
  pl::write_random_encoder("tiny-test", 1, dir / "encoder.kair");
  auto cfg = config_for(dir / "out", dir / "encoder.kair");
  const auto path = pl::cmd_embed(cfg);
  const auto entries = kairos::checkpoint::read_entries(path);
  EXPECT_EQ(entries.size(), 12u);
  for (const auto& e : entries) EXPECT_EQ(e.shape, (kairos::Shape{32}));
  const auto first = slurp(path);
  pl::cmd_embed(cfg);
  EXPECT_EQ(slurp(path), first);
}

TEST(EmbedTest, EmptyDatasetWritesNothing) {
  const auto dir = fresh_dir("embed_empty");
  pl::write_random_encoder("tiny-test", 1, dir / "encoder.kair");
  fs::create_directories(dir / "empty_root");
  auto cfg = config_for(dir / "out", dir / "encoder.kair");
  cfg.dataset_root = dir / "empty_root";
  EXPECT_THROW(pl::cmd_embed(cfg), kairos::DataError);
  EXPECT_FALSE(fs::exists(cfg.embeddings_path()));
}

TEST(EmbedTest, ConfigMismatchIsValidationError) {
  const auto dir = fresh_dir("embed_mismatch");
  pl::write_random_encoder("tiny-test", 1, dir / "encoder.kair");
  auto cfg = config_for(dir / "out", dir / "encoder.kair");
  cfg.encoder_config = "mobilesam-v1";
  EXPECT_THROW(pl::cmd_embed(cfg), kairos::ValidationError);
  EXPECT_FALSE(fs::exists(cfg.embeddings_path()));
}

TEST(TrainEvalTest, SyntheticEmbeddingsReachHighAuroc) {
  const auto dir = fresh_dir("synthetic");
  auto cfg = pl::run_config_from_json({{"output_dir", dir.string()}});
  pl::write_embeddings(synthetic_set(400, 200, 11), cfg.embeddings_path());
  pl::cmd_train(cfg);
  const auto report = pl::cmd_eval(cfg);
  EXPECT_GE(report["overall_auroc"].get<double>(), 0.99);
  EXPECT_GE(report["average_auroc"].get<double>(), 0.99);
  EXPECT_EQ(report["sample_count"], 200);

  // Category average recomputed from the per-sample rows.
  std::map<std::string, std::pair<std::vector<double>, std::vector<std::uint8_t>>> cats;
  for (const auto& s : report["samples"]) {
    auto& c = cats[s["category"].get<std::string>()];
    c.first.push_back(s["logit"].get<double>());
    c.second.push_back(s["label"].get<std::uint8_t>());
  }
  double sum = 0.0;
  for (const auto& [name, c] : cats) {
    const double a = oracle::auroc_pairs(c.first, c.second);
    EXPECT_NEAR(report["categories"][name]["auroc"].get<double>(), a, 1e-12);
    sum += a;
  }
  EXPECT_NEAR(report["average_auroc"].get<double>(), sum / static_cast<double>(cats.size()), 1e-12);

  const auto& cm = report["confusion"];
  EXPECT_EQ(cm["tp"].get<int>() + cm["fp"].get<int>() + cm["tn"].get<int>() + cm["fn"].get<int>(), 200);
  std::ifstream history(cfg.history_path());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(history, line)) {
    const auto j = json::parse(line);
    EXPECT_TRUE(j.contains("epoch") && j.contains("mean_loss") && j.contains("wall_ms"));
    ++lines;
  }
  EXPECT_EQ(lines, 35u);
}

TEST(TrainEvalTest, ZeroEpochsWritesSeededInit) {
  const auto dir = fresh_dir("zero_epochs");
  auto cfg = pl::run_config_from_json({{"output_dir", dir.string()}, {"seed", 4},
                                       {"train", {{"epochs", 0}}}});
  pl::write_embeddings(synthetic_set(40, 10, 2), cfg.embeddings_path());
  pl::cmd_train(cfg);
  const auto head = pl::load_head(cfg.head_path());
  const auto init = kairos::head::head_init(kairos::head::default_config(32, 2), 4);
  for (std::size_t i = 0; i < init.layers.size(); ++i) {
    EXPECT_EQ(head.weights.layers[i].weight, init.layers[i].weight);
  }
}

TEST(TrainEvalTest, SingleClassTrainingSplitFailsWithoutOutput) {
  const auto dir = fresh_dir("single_class");
  auto cfg = pl::run_config_from_json({{"output_dir", dir.string()}});
  auto set = synthetic_set(40, 10, 2);
  for (auto& s : set.samples) s.label = 0;
  pl::write_embeddings(set, cfg.embeddings_path());
  try {
    pl::cmd_train(cfg);
    FAIL() << "expected DataError";
  } catch (const kairos::DataError& e) {
    EXPECT_EQ(pl::exit_code_for(e), 3);
    EXPECT_NE(std::string(e.what()).find("each class"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(fs::exists(cfg.head_path()));
  EXPECT_FALSE(fs::exists(cfg.history_path()));
}

TEST(TrainEvalTest, PerfectAndConstantHeadsOnFixtureSamples) {
  const auto dir = fresh_dir("perfect");
  auto cfg = pl::run_config_from_json({{"output_dir", dir.string()}});
  pl::write_embeddings(label_embeddings(), cfg.embeddings_path());

  write_scalar_head(cfg.head_path(), 4.0f, -2.0f);
  auto report = pl::cmd_eval(cfg);
  for (const auto& [cat, entry] : report["categories"].items()) {
    EXPECT_EQ(entry["auroc"].get<double>(), 1.0) << cat;
  }
  EXPECT_EQ(report["average_auroc"].get<double>(), 1.0);
  EXPECT_EQ(report["confusion"]["fp"], 0);
  EXPECT_EQ(report["confusion"]["fn"], 0);
  for (const auto& s : report["samples"]) {
    const auto label = s["label"].get<int>();
    EXPECT_EQ(s["annotation"], std::to_string(label) + " - " + std::to_string(label));
  }

  write_scalar_head(cfg.head_path(), 0.0f, 0.3f);
  report = pl::cmd_eval(cfg);
  for (const auto& [cat, entry] : report["categories"].items()) {
    EXPECT_EQ(entry["auroc"].get<double>(), 0.5) << cat;
  }
}

TEST(TrainEvalTest, SingleClassCategoryIsFlaggedDegenerate) {
  const auto dir = fresh_dir("degenerate");
  auto cfg = pl::run_config_from_json({{"output_dir", dir.string()}, {"eval", {{"split", "all"}}}});
  auto set = label_embeddings();
  for (auto& s : set.samples) {
    if (s.category == "screw") s.label = 0;
  }
  pl::write_embeddings(set, cfg.embeddings_path());
  write_scalar_head(cfg.head_path(), 1.0f, 0.0f);
  const auto report = pl::cmd_eval(cfg);
  EXPECT_TRUE(report["categories"]["screw"]["degenerate"].get<bool>());
  EXPECT_TRUE(report["categories"]["screw"]["auroc"].is_null());
  EXPECT_FALSE(report["categories"]["bottle"]["degenerate"].get<bool>());
  EXPECT_EQ(report["average_auroc"].get<double>(), report["categories"]["bottle"]["auroc"].get<double>());
}

TEST(BenchTest, ReportSchemaAndAdditivity) {
  const auto dir = fresh_dir("bench");
  pl::write_random_encoder("tiny-test", 1, dir / "encoder.kair");
  auto cfg = config_for(dir / "out", dir / "encoder.kair");
  cfg.train.epochs = 2;
  pl::cmd_embed(cfg);
  pl::cmd_train(cfg);
  cfg.bench_iterations = 1;
  const auto report = pl::cmd_bench(cfg);
  for (const char* key : {"schema", "encoder_config", "warmup", "iterations", "durations_ms", "p50_ms",
                          "p90_ms", "p95_ms", "max_ms", "mean_ms", "parameters",
                          "nondeterministic_fields"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report["p50_ms"], report["max_ms"]);
  const auto& p = report["parameters"];
  EXPECT_EQ(p["encoder"].get<std::size_t>(), 41258u);
  EXPECT_EQ(p["head"].get<std::size_t>(), 32u * 32u + 32u + 32u + 1u);
  EXPECT_EQ(p["total"].get<std::size_t>(), p["encoder"].get<std::size_t>() + p["head"].get<std::size_t>());
  EXPECT_EQ(p["total_millions"], "0.04");
  EXPECT_FALSE(pl::strip_nondeterministic(report).contains("p50_ms"));
}

TEST(ExitCodeTest, Mapping) {
  EXPECT_EQ(pl::exit_code_for(kairos::ConfigError("x")), 2);
  EXPECT_EQ(pl::exit_code_for(kairos::DataError("x")), 3);
  EXPECT_EQ(pl::exit_code_for(kairos::DecodeError("x")), 3);
  EXPECT_EQ(pl::exit_code_for(kairos::ValidationError("x")), 4);
  EXPECT_EQ(pl::exit_code_for(kairos::CorruptionError("x")), 4);
  EXPECT_EQ(pl::exit_code_for(std::runtime_error("x")), 1);
}

TEST(CliTest, ErrorsMapToExitCodes) {
  const auto dir = fresh_dir("cli_errors");
  const auto log = dir / "log.txt";
  EXPECT_EQ(run_cli("embed --set dataset.root=" + (kFixtures / "mini_mvtec").string() +
                        " --set encoder.container=" + (dir / "missing.kair").string() + " --out " +
                        dir.string(),
                    log),
            2);
  EXPECT_NE(slurp(log).find("missing.kair"), std::string::npos);
  EXPECT_EQ(run_cli("train --set train.bogus=1", log), 2);
  EXPECT_EQ(run_cli("frobnicate", log), 2);

  std::ofstream(dir / "garbage.kair") << "KAIRgarbage";
  EXPECT_EQ(run_cli("embed --set dataset.root=" + (kFixtures / "mini_mvtec").string() +
                        " --set encoder.container=" + (dir / "garbage.kair").string() + " --out " +
                        dir.string(),
                    log),
            4);
  EXPECT_FALSE(fs::exists(dir / "embeddings.kair"));
}

TEST(CliTest, InitWeightsAndInspect) {
  const auto dir = fresh_dir("cli_inspect");
  const auto log = dir / "log.txt";
  ASSERT_EQ(run_cli("init-weights --encoder-config tiny-test --seed 3 --out " + (dir / "e.kair").string(), log), 0);
  ASSERT_EQ(run_cli("inspect " + (dir / "e.kair").string(), log), 0);
  const auto text = slurp(log);
  EXPECT_NE(text.find("encoder.neck.conv2.weight [32x32x3x3]"), std::string::npos) << text;
  EXPECT_NE(text.find("parameters: 41258"), std::string::npos) << text;
}
