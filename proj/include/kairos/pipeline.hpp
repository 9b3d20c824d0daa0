#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kairos/dataset.hpp"
#include "kairos/encoder.hpp"
#include "kairos/head.hpp"
#include "kairos/metrics.hpp"
#include "kairos/tensor.hpp"
#include "kairos/trainer.hpp"

// End-to-end commands behind the `kairos` CLI. Every command reads one
// RunConfig and writes its outputs into RunConfig::output_dir via atomic
// renames, so a failed command never leaves a partial file behind.
namespace kairos::pipeline {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";

  std::filesystem::path dataset_root;
  dataset::Layout layout = dataset::Layout::kMvtec;
  double train_fraction = 0.6;

  std::filesystem::path encoder_container;
  std::string encoder_config = "tiny-test";
  encoder::PoolingMode pooling = encoder::PoolingMode::kMean;

  std::filesystem::path embeddings;  // empty: <output_dir>/embeddings.kair

  std::size_t head_layers = 2;
  std::optional<std::vector<std::size_t>> head_hidden_dims;

  trainer::TrainConfig train;

  double threshold = 0.5;
  std::string eval_split = "eval";  // "eval" or "all"

  std::size_t bench_warmup = 10;
  std::size_t bench_iterations = 100;

  std::filesystem::path embeddings_path() const;
  std::filesystem::path head_path() const { return output_dir / "head.kair"; }
  std::filesystem::path history_path() const { return output_dir / "loss_history.jsonl"; }
  std::filesystem::path eval_report_path() const { return output_dir / "eval_report.json"; }
  std::filesystem::path eval_annotations_path() const {
    return output_dir / "eval_annotations.txt";
  }
  std::filesystem::path bench_report_path() const { return output_dir / "bench_report.json"; }
};

nlohmann::json default_config_json();

// `key.sub=value`; value is parsed as JSON when possible, else taken as a
// string. The path must exist in the defaults. Throws ConfigError.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Merges `user` over the defaults, rejecting unknown keys, then converts.
RunConfig run_config_from_json(const nlohmann::json& user);
RunConfig load_run_config(const std::optional<std::filesystem::path>& path,
                          const std::vector<std::string>& overrides,
                          const std::optional<std::filesystem::path>& out_dir);

struct SampleInfo {
  std::string id;
  std::string category;
  std::uint8_t label = 0;
  dataset::Split split = dataset::Split::kUnassigned;

  friend bool operator==(const SampleInfo&, const SampleInfo&) = default;
};

// Embedding cache: one `embedding.<index>` entry per sample (index zero
// padded to 6 digits, dataset order); sample ids, categories, labels and
// split tags live in the `samples` metadata key as a JSON array.
struct EmbeddingSet {
  std::vector<SampleInfo> samples;
  Tensor matrix;  // N×d
  std::string encoder_config;
  std::string pooling;
  std::uint64_t seed = 0;
  double train_fraction = 0.0;

  EmbeddingSet select(dataset::Split split) const;
  std::vector<std::uint8_t> labels() const;
};

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

// Reads an encoder container. The config comes from the container metadata
// when present and must then be named `expected_name`; otherwise the named
// built-in config is used.
encoder::EncoderWeights load_encoder(const std::filesystem::path& path,
                                     const std::string& expected_name);

// Writes seeded random weights for a named config, with the config JSON in
// the metadata.
void write_random_encoder(const std::string& config_name, std::uint64_t seed,
                          const std::filesystem::path& path);

struct LoadedHead {
  head::HeadConfig config;
  head::HeadWeights weights;
};
LoadedHead load_head(const std::filesystem::path& path);

std::filesystem::path cmd_embed(const RunConfig& config);
void cmd_train(const RunConfig& config);
nlohmann::json cmd_eval(const RunConfig& config);
nlohmann::json cmd_bench(const RunConfig& config);

// Removes every field a report lists under "nondeterministic_fields".
nlohmann::json strip_nondeterministic(nlohmann::json report);

// Process exit status for an exception escaping a command:
// 2 config, 3 data, 4 weights/container.
int exit_code_for(const std::exception& e);

}  // namespace kairos::pipeline
