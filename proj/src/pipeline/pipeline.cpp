#include "kairos/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "kairos/checkpoint.hpp"
#include "kairos/error.hpp"
#include "kairos/ops.hpp"

namespace kairos::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kEvalSchema = "kairos.eval_report/1";
constexpr const char* kBenchSchema = "kairos.bench_report/1";

void merge_checked(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config" + path + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key \"" + here.substr(1) + "\"");
    if (base[key].is_object()) {
      merge_checked(base[key], value, here);
    } else {
      base[key] = value;
    }
  }
}

template <typename T>
T field(const json& j, const std::string& name) {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field \"" + name + "\": " + e.what());
  }
}

std::string split_name(dataset::Split s) { return dataset::to_string(s); }

dataset::Split split_from_name(const std::string& s) {
  if (s == "train") return dataset::Split::kTrain;
  if (s == "eval") return dataset::Split::kEval;
  if (s == "unassigned") return dataset::Split::kUnassigned;
  throw FormatError("unknown split tag \"" + s + "\"");
}

void ensure_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
}

void require_file(const fs::path& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " path is not set");
  if (!fs::is_regular_file(path)) {
    throw ConfigError(what + " \"" + path.string() + "\" does not exist");
  }
}

std::string format_double(double v) {
  return json(v).dump();
}

// Fixed S×S RGB test pattern for latency measurement.
Image bench_image(std::size_t s) {
  Image img;
  img.height = img.width = s;
  img.channels = 3;
  img.pixels.resize(s * s * 3);
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img.pixels[(y * s + x) * 3 + c] = static_cast<std::uint8_t>((x * 7 + y * 13 + c * 29) % 256);
      }
    }
  }
  return img;
}

}  // namespace

fs::path RunConfig::embeddings_path() const {
  return embeddings.empty() ? output_dir / "embeddings.kair" : embeddings;
}

json default_config_json() {
  return {
      {"seed", 0},
      {"output_dir", "out"},
      {"dataset", {{"root", ""}, {"layout", "mvtec"}, {"train_fraction", 0.6}}},
      {"encoder", {{"container", ""}, {"config", "tiny-test"}, {"pooling", "mean"}}},
      {"embeddings", ""},
      {"head", {{"num_layers", 2}, {"hidden_dims", nullptr}}},
      {"train",
       {{"epochs", 35},
        {"learning_rate", 1e-2},
        {"batch_size", 32},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"epsilon", 1e-8},
        {"class_weight_override", nullptr}}},
      {"eval", {{"threshold", 0.5}, {"split", "eval"}}},
      {"bench", {{"warmup", 10}, {"iterations", 100}}},
  };
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override \"" + assignment + "\" must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  const json defaults = default_config_json();
  const json* schema = &defaults;
  json* node = &config;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (!schema->is_object() || !schema->contains(path[i])) {
      throw ConfigError("unknown config key \"" + key + "\"");
    }
    schema = &(*schema)[path[i]];
    if (i + 1 == path.size()) {
      (*node)[path[i]] = value;
    } else {
      if (!node->contains(path[i]) || !(*node)[path[i]].is_object()) {
        (*node)[path[i]] = json::object();
      }
      node = &(*node)[path[i]];
    }
  }
}

RunConfig run_config_from_json(const json& user) {
  json doc = default_config_json();
  merge_checked(doc, user, "");

  RunConfig c;
  c.seed = field<std::uint64_t>(doc, "seed");
  c.output_dir = field<std::string>(doc, "output_dir");
  const auto& ds = doc["dataset"];
  c.dataset_root = field<std::string>(ds, "root");
  c.layout = dataset::layout_from_string(field<std::string>(ds, "layout"));
  c.train_fraction = field<double>(ds, "train_fraction");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) {
    throw ConfigError("dataset.train_fraction must lie in (0, 1)");
  }
  const auto& enc = doc["encoder"];
  c.encoder_container = field<std::string>(enc, "container");
  c.encoder_config = field<std::string>(enc, "config");
  c.pooling = encoder::pooling_from_string(field<std::string>(enc, "pooling"));
  c.embeddings = field<std::string>(doc, "embeddings");

  const auto& hd = doc["head"];
  c.head_layers = field<std::size_t>(hd, "num_layers");
  if (c.head_layers == 0) throw ConfigError("head.num_layers must be >= 1");
  if (!hd["hidden_dims"].is_null()) {
    c.head_hidden_dims = field<std::vector<std::size_t>>(hd, "hidden_dims");
  }

  const auto& tr = doc["train"];
  c.train.epochs = field<std::size_t>(tr, "epochs");
  c.train.learning_rate = field<double>(tr, "learning_rate");
  c.train.batch_size = field<std::size_t>(tr, "batch_size");
  c.train.beta1 = field<double>(tr, "beta1");
  c.train.beta2 = field<double>(tr, "beta2");
  c.train.epsilon = field<double>(tr, "epsilon");
  if (!tr["class_weight_override"].is_null()) {
    c.train.class_weight_override = field<double>(tr, "class_weight_override");
  }
  c.train.seed = c.seed;
  trainer::validate(c.train);

  const auto& ev = doc["eval"];
  c.threshold = field<double>(ev, "threshold");
  c.eval_split = field<std::string>(ev, "split");
  if (c.eval_split != "eval" && c.eval_split != "all") {
    throw ConfigError("eval.split must be \"eval\" or \"all\"");
  }
  const auto& bn = doc["bench"];
  c.bench_warmup = field<std::size_t>(bn, "warmup");
  c.bench_iterations = field<std::size_t>(bn, "iterations");
  if (c.bench_iterations == 0) throw ConfigError("bench.iterations must be >= 1");
  return c;
}

RunConfig load_run_config(const std::optional<fs::path>& path,
                          const std::vector<std::string>& overrides,
                          const std::optional<fs::path>& out_dir) {
  json user = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config file " + path->string());
    try {
      user = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path->string() + " is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw ConfigError("config file must hold a JSON object");
  }
  for (const auto& o : overrides) apply_override(user, o);
  if (out_dir) user["output_dir"] = out_dir->string();
  return run_config_from_json(user);
}

EmbeddingSet EmbeddingSet::select(dataset::Split split) const {
  EmbeddingSet out;
  out.encoder_config = encoder_config;
  out.pooling = pooling;
  out.seed = seed;
  out.train_fraction = train_fraction;
  const std::size_t d = matrix.extent(1);
  std::vector<float> rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split != split) continue;
    out.samples.push_back(samples[i]);
    rows.insert(rows.end(), matrix.data().begin() + i * d, matrix.data().begin() + (i + 1) * d);
  }
  if (!out.samples.empty()) out.matrix = Tensor({out.samples.size(), d}, std::move(rows));
  return out;
}

std::vector<std::uint8_t> EmbeddingSet::labels() const {
  std::vector<std::uint8_t> out;
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void write_embeddings(const EmbeddingSet& set, const fs::path& path) {
  if (set.samples.empty()) throw DataError("refusing to write an empty embedding set");
  if (set.matrix.rank() != 2 || set.matrix.extent(0) != set.samples.size()) {
    throw DimensionError("embedding matrix must have one row per sample");
  }
  const std::size_t d = set.matrix.extent(1);
  checkpoint::TensorMap tensors;
  json samples = json::array();
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "embedding.%06zu", i);
    std::vector<float> row(set.matrix.data().begin() + i * d,
                           set.matrix.data().begin() + (i + 1) * d);
    tensors.emplace(name, Tensor({d}, std::move(row)));
    const auto& s = set.samples[i];
    samples.push_back({{"id", s.id},
                       {"category", s.category},
                       {"label", s.label},
                       {"split", split_name(s.split)}});
  }
  const checkpoint::Metadata meta{{"kind", "embeddings"},
                                  {"samples", samples.dump()},
                                  {"encoder_config", set.encoder_config},
                                  {"pooling", set.pooling},
                                  {"seed", std::to_string(set.seed)},
                                  {"train_fraction", format_double(set.train_fraction)}};
  checkpoint::write_container(tensors, meta, path);
}

EmbeddingSet read_embeddings(const fs::path& path) {
  const auto container = checkpoint::read_container(path);
  const auto& meta = container.metadata;
  auto get = [&](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(path.string() + ": missing metadata \"" + key + "\"");
    return it->second;
  };
  if (get("kind") != "embeddings") {
    throw FormatError(path.string() + ": not an embeddings container");
  }
  EmbeddingSet set;
  set.encoder_config = get("encoder_config");
  set.pooling = get("pooling");
  try {
    set.seed = std::stoull(get("seed"));
    set.train_fraction = std::stod(get("train_fraction"));
    for (const auto& s : json::parse(get("samples"))) {
      set.samples.push_back({s.at("id").get<std::string>(), s.at("category").get<std::string>(),
                             s.at("label").get<std::uint8_t>(),
                             split_from_name(s.at("split").get<std::string>())});
    }
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": malformed embeddings metadata: " + e.what());
  }
  if (set.samples.size() != container.tensors.size() || set.samples.empty()) {
    throw FormatError(path.string() + ": sample list does not match embedding entries");
  }
  std::size_t d = 0;
  std::vector<float> rows;
  std::size_t i = 0;
  for (const auto& [name, t] : container.tensors) {
    char expected[32];
    std::snprintf(expected, sizeof expected, "embedding.%06zu", i++);
    if (name != expected || t.rank() != 1 || (d != 0 && t.numel() != d)) {
      throw FormatError(path.string() + ": unexpected embedding entry \"" + name + "\"");
    }
    d = t.numel();
    rows.insert(rows.end(), t.data().begin(), t.data().end());
  }
  set.matrix = Tensor({set.samples.size(), d}, std::move(rows));
  return set;
}

encoder::EncoderWeights load_encoder(const fs::path& path, const std::string& expected_name) {
  const auto container = checkpoint::read_container(path);
  encoder::EncoderConfig config;
  const auto it = container.metadata.find(encoder::kConfigMetadataKey);
  if (it != container.metadata.end()) {
    try {
      config = encoder::config_from_json(it->second);
    } catch (const ConfigError& e) {
      throw ValidationError(path.string() + ": " + e.what());
    }
    if (!expected_name.empty() && config.name != expected_name) {
      throw ValidationError(path.string() + ": container holds encoder config \"" +
                            config.name + "\", run asks for \"" + expected_name + "\"");
    }
  } else {
    config = encoder::named_config(expected_name);
  }
  return encoder::EncoderWeights(std::move(config), container.tensors);
}

void write_random_encoder(const std::string& config_name, std::uint64_t seed,
                          const fs::path& path) {
  const auto config = encoder::named_config(config_name);
  checkpoint::write_container(
      encoder::random_weights(config, seed),
      {{encoder::kConfigMetadataKey, encoder::config_to_json(config)},
       {"model", "kairos-encoder"},
       {"note", "seeded random weights, seed " + std::to_string(seed)}},
      path);
}

LoadedHead load_head(const fs::path& path) {
  const auto container = checkpoint::read_container(path);
  const auto it = container.metadata.find(head::kConfigMetadataKey);
  if (it == container.metadata.end()) {
    throw ValidationError(path.string() + ": missing head_config metadata");
  }
  LoadedHead out;
  try {
    out.config = head::config_from_json(it->second);
  } catch (const ConfigError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  out.weights = head::load(container.tensors, out.config);
  return out;
}

fs::path cmd_embed(const RunConfig& config) {
  if (config.dataset_root.empty()) throw ConfigError("dataset.root is not set");
  if (!fs::is_directory(config.dataset_root)) {
    throw ConfigError("dataset root \"" + config.dataset_root.string() + "\" does not exist");
  }
  require_file(config.encoder_container, "encoder container");

  const auto manifest = dataset::stratified_split(
      dataset::scan_dataset(config.dataset_root, config.layout), config.train_fraction,
      config.seed);
  if (manifest.size() == 0) {
    throw DataError("dataset \"" + config.dataset_root.string() + "\" contains no images");
  }
  const auto weights = load_encoder(config.encoder_container, config.encoder_config);
  const auto& enc = weights.config();

  EmbeddingSet set;
  set.encoder_config = enc.name;
  set.pooling = encoder::to_string(config.pooling);
  set.seed = config.seed;
  set.train_fraction = config.train_fraction;
  const std::size_t d = encoder::embedding_dim(enc, config.pooling);
  std::vector<float> rows;
  rows.reserve(manifest.size() * d);
  for (const auto& ref : manifest.samples()) {
    const auto sample = dataset::load_sample(ref);
    const Tensor x = encoder::preprocess_image(sample.image, enc.input_resolution,
                                               enc.pixel_mean, enc.pixel_std);
    const auto e = encoder::pool_embedding(encoder::encode(x, weights), config.pooling);
    rows.insert(rows.end(), e.values.begin(), e.values.end());
    set.samples.push_back({ref.id, ref.category, ref.label, ref.split});
  }
  set.matrix = Tensor({set.samples.size(), d}, std::move(rows));

  ensure_output_dir(config.output_dir);
  const auto out = config.embeddings_path();
  write_embeddings(set, out);
  return out;
}

void cmd_train(const RunConfig& config) {
  require_file(config.embeddings_path(), "embeddings container");
  const auto all = read_embeddings(config.embeddings_path());
  const auto train = all.select(dataset::Split::kTrain);
  if (train.samples.empty()) throw DataError("no samples tagged for training");
  const auto labels = train.labels();

  const std::size_t d = train.matrix.extent(1);
  head::HeadConfig head_config = head::default_config(d, config.head_layers);
  if (config.head_hidden_dims) {
    head_config.hidden_dims = *config.head_hidden_dims;
    head::validate(head_config);
  }
  const auto result = trainer::train_head(train.matrix, labels, head_config, config.train);

  checkpoint::TensorMap tensors;
  head::store(result.weights, tensors);
  const json train_doc = {{"epochs", config.train.epochs},
                          {"learning_rate", config.train.learning_rate},
                          {"batch_size", config.train.batch_size},
                          {"beta1", config.train.beta1},
                          {"beta2", config.train.beta2},
                          {"epsilon", config.train.epsilon},
                          {"seed", config.train.seed},
                          {"positive_weight", result.positive_weight},
                          {"train_samples", labels.size()}};
  ensure_output_dir(config.output_dir);
  checkpoint::write_container(tensors,
                              {{head::kConfigMetadataKey, head::config_to_json(head_config)},
                               {"train_config", train_doc.dump()},
                               {"encoder_config", all.encoder_config},
                               {"pooling", all.pooling}},
                              config.head_path());
  checkpoint::write_file_atomic(config.history_path(), trainer::history_to_jsonl(result.history));
}

json cmd_eval(const RunConfig& config) {
  require_file(config.embeddings_path(), "embeddings container");
  require_file(config.head_path(), "head container");
  const auto all = read_embeddings(config.embeddings_path());
  const auto set = config.eval_split == "all" ? all : all.select(dataset::Split::kEval);
  if (set.samples.empty()) throw DataError("no samples tagged for evaluation");
  const auto head = load_head(config.head_path());
  if (head.config.input_dim != set.matrix.extent(1)) {
    throw ValidationError("head expects " + std::to_string(head.config.input_dim) +
                          "-d embeddings, container has " +
                          std::to_string(set.matrix.extent(1)));
  }

  const auto logits = head::head_forward(set.matrix, head.weights);
  std::vector<double> probs;
  json samples = json::array();
  std::string annotations;
  std::map<std::string, std::pair<std::vector<double>, std::vector<std::uint8_t>>> by_category;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto& s = set.samples[i];
    const auto score = head::score_from_logit(logits[i]);
    const int predicted = score.probability >= config.threshold ? 1 : 0;
    const std::string note = std::to_string(s.label) + " - " + std::to_string(predicted);
    probs.push_back(score.probability);
    samples.push_back({{"id", s.id},
                       {"category", s.category},
                       {"label", s.label},
                       {"logit", score.logit},
                       {"probability", score.probability},
                       {"predicted", predicted},
                       {"annotation", note}});
    annotations += s.category + "/" + s.id + ": " + note + "\n";
    by_category[s.category].first.push_back(score.logit);
    by_category[s.category].second.push_back(s.label);
  }

  json categories = json::object();
  double auroc_sum = 0.0;
  std::size_t auroc_count = 0;
  for (const auto& [cat, data] : by_category) {
    json entry = {{"count", data.first.size()}};
    try {
      const double a = metrics::auroc(data.first, data.second);
      entry["auroc"] = a;
      entry["degenerate"] = false;
      auroc_sum += a;
      ++auroc_count;
    } catch (const DataError&) {
      entry["auroc"] = nullptr;
      entry["degenerate"] = true;
    }
    categories[cat] = std::move(entry);
  }

  const auto labels = set.labels();
  const std::vector<double> logit_scores(logits.begin(), logits.end());
  json overall = nullptr;
  try {
    overall = metrics::auroc(logit_scores, labels);
  } catch (const DataError&) {
  }
  const auto cm = metrics::confusion_at_threshold(probs, labels, config.threshold);

  json report = {
      {"schema", kEvalSchema},
      {"split", config.eval_split},
      {"seed", all.seed},
      {"train_fraction", all.train_fraction},
      {"threshold", config.threshold},
      {"sample_count", set.samples.size()},
      {"samples", samples},
      {"categories", categories},
      {"average_auroc", auroc_count ? json(auroc_sum / static_cast<double>(auroc_count)) : json()},
      {"overall_auroc", overall},
      {"confusion", {{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}}},
      {"nondeterministic_fields", json::array()},
  };
  ensure_output_dir(config.output_dir);
  checkpoint::write_file_atomic(config.eval_report_path(), report.dump(2) + "\n");
  checkpoint::write_file_atomic(config.eval_annotations_path(), annotations);
  return report;
}

json cmd_bench(const RunConfig& config) {
  require_file(config.encoder_container, "encoder container");
  require_file(config.head_path(), "head container");
  const auto weights = load_encoder(config.encoder_container, config.encoder_config);
  const auto head = load_head(config.head_path());
  const auto& enc = weights.config();
  if (head.config.input_dim != encoder::embedding_dim(enc, config.pooling)) {
    throw ValidationError("head input_dim does not match encoder embedding size");
  }

  checkpoint::TensorMap head_tensors;
  head::store(head.weights, head_tensors);
  metrics::ParameterCounts params;
  params.encoder = metrics::count_parameters(weights.tensors(), "encoder.");
  params.head = metrics::count_parameters(head_tensors, "head.");
  params.total = params.encoder + params.head;

  const Image image = bench_image(enc.input_resolution);
  double sink = 0.0;
  auto runner = [&] {
    const Tensor x = encoder::preprocess_image(image, enc.input_resolution, enc.pixel_mean,
                                               enc.pixel_std);
    const auto e = encoder::pool_embedding(encoder::encode(x, weights), config.pooling);
    const Tensor batch({1, e.dim()}, e.values);
    sink += ops::sigmoid(static_cast<double>(head::head_forward(batch, head.weights)[0]));
  };
  auto bench = metrics::latency_bench(runner, config.bench_warmup, config.bench_iterations);
  bench.parameters = params;

  const auto& lat = bench.latency;
  json report = {
      {"schema", kBenchSchema},
      {"encoder_config", enc.name},
      {"pooling", encoder::to_string(config.pooling)},
      {"batch_size", 1},
      {"warmup", bench.warmup},
      {"iterations", bench.iterations},
      {"durations_ms", lat.durations_ms},
      {"p50_ms", lat.p50},
      {"p90_ms", lat.p90},
      {"p95_ms", lat.p95},
      {"max_ms", lat.max},
      {"mean_ms", lat.mean},
      {"parameters",
       {{"encoder", params.encoder},
        {"head", params.head},
        {"total", params.total},
        {"total_millions", metrics::format_millions(params.total)}}},
      {"nondeterministic_fields",
       {"durations_ms", "p50_ms", "p90_ms", "p95_ms", "max_ms", "mean_ms"}},
  };
  ensure_output_dir(config.output_dir);
  checkpoint::write_file_atomic(config.bench_report_path(), report.dump(2) + "\n");
  return report;
}

json strip_nondeterministic(json report) {
  if (!report.is_object() || !report.contains("nondeterministic_fields")) return report;
  for (const auto& f : report["nondeterministic_fields"]) report.erase(f.get<std::string>());
  return report;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const DecodeError*>(&e) ||
      dynamic_cast<const IoError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const CorruptionError*>(&e) ||
      dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const DimensionError*>(&e)) {
    return 4;
  }
  return 1;
}

}  // namespace kairos::pipeline
