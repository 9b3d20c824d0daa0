// Acceptance gate: runs each primary criterion at its stated tolerance and
// prints one PASS/FAIL line per criterion. Exit status is nonzero if any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "checks.hpp"
#include "kairos/checkpoint.hpp"
#include "kairos/encoder.hpp"
#include "kairos/error.hpp"
#include "kairos/head.hpp"
#include "kairos/metrics.hpp"
#include "kairos/pipeline.hpp"
#include "kairos/rng.hpp"
#include "kairos/trainer.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

struct Criterion {
  std::string name;
  double time_limit_s;  // <= 0: no runtime bound
  std::function<void(Outcome&)> run;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void suite(Outcome& out, const std::string& name, const checks::SuiteResult& r,
           std::size_t min_cases, double tol) {
  out.detail << name << " " << r.cases << " cases worst " << fmt(r.worst) << "; ";
  out.require(r.cases >= min_cases, name + " case count");
  out.require(r.worst < tol, name + " worst " + fmt(r.worst) + " at " + r.worst_case);
}

void kernels(Outcome& out) {
  suite(out, "conv2d", checks::conv2d_suite(1, 120), 100, 1e-5);
  suite(out, "linear", checks::linear_suite(2, 120), 100, 1e-5);
  suite(out, "layer_norm", checks::layer_norm_suite(3, 120), 100, 1e-6);
  suite(out, "softmax", checks::softmax_suite(4, 120), 100, 1e-6);
  suite(out, "attention", checks::attention_suite(5, 120), 100, 1e-5);
}

void auroc(Outcome& out) {
  suite(out, "pairs", checks::auroc_pairs_suite(11, 500), 500, 1e-12);
  suite(out, "monotone", checks::auroc_monotone_suite(12, 500), 500, 1e-12);
}

void gradients(Outcome& out) {
  suite(out, "wbce_grad_logits", checks::loss_gradient_suite(21, 200), 100, 1e-3);
  suite(out, "head_backward", checks::head_gradient_suite(22, 120), 100, 1e-3);

  const std::vector<double> s0{0.0};
  const std::vector<std::uint8_t> y1{1};
  const double g = kairos::trainer::wbce_grad_logits({s0, y1, 1.0})[0];
  out.detail << "grad(s=0,y=1) " << g << "; ";
  out.require(g == -0.5, "grad(s=0,y=1) = " + fmt(g));

  const std::vector<double> zeros(16, 0.0);
  std::vector<std::uint8_t> labels(16, 0);
  for (std::size_t i = 0; i < labels.size(); i += 3) labels[i] = 1;
  const double loss = kairos::trainer::wbce_loss({zeros, labels, 1.0});
  out.detail << "zero-logit loss - ln2 " << fmt(loss - std::log(2.0));
  out.require(std::abs(loss - std::log(2.0)) <= 1e-9, "zero-logit loss");
}

void adam(Outcome& out) {
  namespace tr = kairos::trainer;
  const tr::AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  const auto ref = oracle::adam_quadratic(1.0, cfg.learning_rate, cfg.beta1, cfg.beta2,
                                          cfg.epsilon, 3);
  std::vector<double> w{1.0};
  tr::AdamState<double> state(1);
  double worst = 0.0;
  for (int t = 0; t < 3; ++t) {
    const std::vector<double> g{2.0 * w[0]};
    tr::adam_step<double>(w, g, state, cfg);
    worst = std::max(worst, std::abs(w[0] - ref.weights[static_cast<std::size_t>(t)]));
  }
  out.detail << "trace worst " << fmt(worst) << "; ";
  out.require(worst <= 1e-9, "3-step trace");

  kairos::Rng rng(31);
  std::vector<double> p(256, 0.0), grad(256);
  for (auto& v : grad) v = rng.uniform(-5.0, 5.0);
  tr::AdamState<double> s1(p.size());
  tr::adam_step<double>(p, grad, s1, cfg);
  double first = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double want = -cfg.learning_rate * grad[i] / (std::abs(grad[i]) + cfg.epsilon);
    first = std::max(first, std::abs(p[i] - want));
  }
  out.detail << "t=1 closed form worst " << fmt(first);
  out.require(first <= 1e-12, "t=1 closed form");
}

void end_to_end(Outcome& out) {
  namespace tr = kairos::trainer;
  const auto train = synthetic::gaussian_clusters(400, 32, 2.0, 9, 100);
  const auto test = synthetic::gaussian_clusters(200, 32, 2.0, 9, 200);
  const auto cfg = kairos::head::default_config(32, 2);
  tr::TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 35;
  tc.seed = 5;
  const auto a = tr::train_head(train.matrix, train.labels, cfg, tc);
  const auto b = tr::train_head(train.matrix, train.labels, cfg, tc);

  const auto logits = kairos::head::head_forward(test.matrix, a.weights);
  const std::vector<double> scores(logits.begin(), logits.end());
  const double auc = kairos::metrics::auroc(scores, test.labels);
  const double first = a.history.front().mean_loss, last = a.history.back().mean_loss;
  const double reduction = 1.0 - last / first;
  bool identical = a.history.size() == b.history.size();
  for (std::size_t i = 0; identical && i < a.weights.layers.size(); ++i) {
    identical = a.weights.layers[i].weight == b.weights.layers[i].weight &&
                a.weights.layers[i].bias == b.weights.layers[i].bias;
  }
  out.detail << "w " << a.positive_weight << ", AUROC " << auc << ", loss " << fmt(first) << " -> "
             << fmt(last) << " (" << fmt(100.0 * reduction) << "% lower), reruns "
             << (identical ? "bit-identical" : "differ");
  out.require(a.positive_weight == 9.0, "class weight");
  out.require(a.history.size() <= 35, "epoch budget");
  out.require(auc >= 0.99, "held-out AUROC");
  out.require(reduction >= 0.10, "loss reduction");
  out.require(identical, "determinism");
}

bool structured_only(std::span<const std::byte> bytes) {
  try {
    kairos::checkpoint::decode_container(bytes);
  } catch (const kairos::Error&) {
  } catch (...) {
    return false;
  }
  return true;
}

void container(Outcome& out, const fs::path& work) {
  namespace ck = kairos::checkpoint;
  kairos::Rng rng(41);
  ck::TensorMap tensors;
  for (int i = 0; i < 12; ++i) {
    kairos::Shape shape;
    for (std::size_t r = 0, rank = synthetic::random_extent(rng, 1, 4); r < rank; ++r) {
      shape.push_back(synthetic::random_extent(rng, 1, 9));
    }
    tensors.emplace("t." + std::to_string(i), synthetic::random_tensor(shape, rng, 100.0));
  }
  const auto path = work / "roundtrip.kair";
  ck::write_container(tensors, {{"k", "v"}}, path);
  const auto on_disk = ck::read_file(path);
  const auto back = ck::read_container(path);
  const bool same = back.tensors == tensors && ck::encode_container(back.tensors, back.metadata) == on_disk;
  out.require(same, "round trip");

  const std::string header =
      R"({"entries":[{"length":8,"name":"w","offset":0,"shape":[1,2]}],"metadata":{}})";
  std::vector<std::byte> ref;
  for (int b : std::initializer_list<int>{'K', 'A', 'I', 'R', 1, 0, 0, 0, 76, 0, 0, 0, 0, 0, 0, 0}) ref.push_back(std::byte(b));
  for (char c : header) ref.push_back(std::byte(c));
  for (int b : {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0xC0}) ref.push_back(std::byte(b));
  bool reference_ok = false;
  try {
    const auto c = ck::decode_container(ref);
    reference_ok = c.tensors.size() == 1 &&
                   c.tensors.at("w") == kairos::Tensor::from({1, 2}, {1.0f, -2.5f});
  } catch (const kairos::Error&) {
  }
  out.require(reference_ok, "reference file");

  const auto valid = ck::encode_container(tensors, {{"k", "v"}});
  std::size_t trials = 0, escaped = 0;
  for (; trials < 3000; ++trials) {
    std::vector<std::byte> buf(4096);
    for (auto& b : buf) b = static_cast<std::byte>(rng.below(256));
    if (trials % 3 != 0) {
      const auto keep = std::min(buf.size(), rng.below(valid.size() + 1));
      std::copy_n(valid.begin(), keep, buf.begin());
      if (trials % 3 == 2) buf[rng.below(buf.size())] = static_cast<std::byte>(rng.below(256));
    }
    if (!structured_only(std::span(buf).first(rng.below(buf.size() + 1)))) ++escaped;
  }
  out.detail << "round trip " << (same ? "exact" : "differs") << ", reference "
             << (reference_ok ? "parses" : "rejected") << ", fuzz " << trials << " trials, "
             << escaped << " unstructured";
  out.require(escaped == 0, "fuzz");
}

void parameters(Outcome& out) {
  namespace m = kairos::metrics;
  const kairos::checkpoint::TensorMap lin{{"fc.weight", kairos::Tensor({32, 64})},
                                          {"fc.bias", kairos::Tensor({32})}};
  const auto linear = m::count_parameters(lin);
  out.require(linear == 2080, "linear 64->32");

  const auto config = kairos::encoder::named_config("tiny-test");
  auto tensors = kairos::encoder::random_weights(config, 1);
  const auto encoder = m::count_parameters(tensors);
  const auto tally = checks::tally_encoder_parameters(config);
  out.require(encoder == tally, "encoder tally");

  const auto head = kairos::head::head_init(kairos::head::default_config(config.out_channels, 2), 0);
  kairos::checkpoint::TensorMap head_tensors;
  kairos::head::store(head, head_tensors);
  const auto head_count = m::count_parameters(head_tensors);
  tensors.insert(head_tensors.begin(), head_tensors.end());
  const auto total = m::count_parameters(tensors);
  out.require(total == encoder + head_count, "additivity");
  out.detail << "linear " << linear << ", encoder " << encoder << " (tally " << tally << "), head "
             << head_count << ", total " << total;
}

int run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::string strip_wall_ms(const fs::path& history) {
  std::ifstream in(history);
  std::string line, out;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j.erase("wall_ms");
    out += j.dump() + "\n";
  }
  return out;
}

bool has_types(const json& j, const std::vector<std::pair<std::string, json::value_t>>& fields) {
  for (const auto& [key, type] : fields) {
    if (!j.contains(key)) return false;
    const auto t = j[key].type();
    const bool number = type == json::value_t::number_float &&
                        (t == json::value_t::number_unsigned || t == json::value_t::number_integer);
    if (t != type && !number) return false;
  }
  return true;
}

bool eval_schema_ok(const json& r) {
  using V = json::value_t;
  if (!has_types(r, {{"schema", V::string}, {"split", V::string}, {"threshold", V::number_float},
                     {"sample_count", V::number_unsigned}, {"samples", V::array},
                     {"categories", V::object}, {"confusion", V::object},
                     {"nondeterministic_fields", V::array}})) {
    return false;
  }
  if (r["schema"] != "kairos.eval_report/1" || r["samples"].size() != r["sample_count"]) return false;
  for (const auto& s : r["samples"]) {
    if (!has_types(s, {{"id", V::string}, {"category", V::string}, {"label", V::number_unsigned},
                       {"logit", V::number_float}, {"probability", V::number_float}})) {
      return false;
    }
  }
  for (const auto& [name, c] : r["categories"].items()) {
    if (!c.contains("auroc") || !c.contains("degenerate") || !c["degenerate"].is_boolean()) return false;
    if (!c["degenerate"].get<bool>() && !c["auroc"].is_number()) return false;
  }
  for (const char* k : {"tp", "fp", "tn", "fn"}) {
    if (!r["confusion"].contains(k) || !r["confusion"][k].is_number_unsigned()) return false;
  }
  return r["average_auroc"].is_number() || r["average_auroc"].is_null();
}

bool bench_schema_ok(const json& r) {
  using V = json::value_t;
  if (!has_types(r, {{"schema", V::string}, {"encoder_config", V::string},
                     {"iterations", V::number_unsigned}, {"warmup", V::number_unsigned},
                     {"durations_ms", V::array}, {"p50_ms", V::number_float},
                     {"p90_ms", V::number_float}, {"p95_ms", V::number_float},
                     {"max_ms", V::number_float}, {"mean_ms", V::number_float},
                     {"parameters", V::object}, {"nondeterministic_fields", V::array}})) {
    return false;
  }
  const auto& p = r["parameters"];
  return r["schema"] == "kairos.bench_report/1" &&
         r["durations_ms"].size() == r["iterations"].get<std::size_t>() &&
         r["p50_ms"] <= r["p90_ms"] && r["p90_ms"] <= r["p95_ms"] && r["p95_ms"] <= r["max_ms"] &&
         p["total"].get<std::size_t>() == p["encoder"].get<std::size_t>() + p["head"].get<std::size_t>();
}

void cli_smoke(Outcome& out, const std::string& cli, const fs::path& fixtures, const fs::path& work) {
  const auto weights = work / "tiny-test.kair";
  const auto log = work / "cli.log";
  const std::string redirect = " >> " + log.string() + " 2>&1";
  if (run(cli + " init-weights --encoder-config tiny-test --seed 7 --out " + weights.string() +
          redirect) != 0) {
    out.require(false, "init-weights");
    return;
  }
  const std::string sets = " --set dataset.root=" + (fixtures / "mini_mvtec").string() +
                           " --set encoder.container=" + weights.string() +
                           " --set bench.warmup=2 --set bench.iterations=5";

  std::vector<fs::path> dirs{work / "run_a", work / "run_b"};
  for (const auto& dir : dirs) {
    fs::remove_all(dir);
    for (const char* verb : {"embed", "train", "eval", "bench"}) {
      const int code = run(cli + " " + verb + sets + " --out " + dir.string() + redirect);
      out.require(code == 0, std::string(verb) + " exit " + std::to_string(code));
      if (code != 0) return;
    }
  }

  const auto embeddings = kairos::checkpoint::read_entries(dirs[0] / "embeddings.kair");
  out.require(embeddings.size() == 12, "12 embeddings");
  const auto eval = json::parse(slurp(dirs[0] / "eval_report.json"));
  const auto bench = json::parse(slurp(dirs[0] / "bench_report.json"));
  const bool schemas = eval_schema_ok(eval) && bench_schema_ok(bench);
  out.require(schemas, "report schemas");

  std::size_t differing = 0;
  for (const char* file : {"embeddings.kair", "head.kair", "eval_report.json", "eval_annotations.txt"}) {
    if (slurp(dirs[0] / file) != slurp(dirs[1] / file)) {
      ++differing;
      out.require(false, std::string(file) + " differs");
    }
  }
  const auto bench_b = json::parse(slurp(dirs[1] / "bench_report.json"));
  if (kairos::pipeline::strip_nondeterministic(bench).dump() !=
      kairos::pipeline::strip_nondeterministic(bench_b).dump()) {
    ++differing;
    out.require(false, "bench report differs");
  }
  if (strip_wall_ms(dirs[0] / "loss_history.jsonl") != strip_wall_ms(dirs[1] / "loss_history.jsonl")) {
    ++differing;
    out.require(false, "loss history differs");
  }
  out.detail << "4 verbs x 2 runs exit 0, " << embeddings.size() << " embeddings, schemas "
             << (schemas ? "valid" : "invalid") << ", " << differing << " differing outputs";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance gate"};
  std::string cli, fixtures, work;
  app.add_option("--cli", cli, "Path to the kairos executable")->required();
  app.add_option("--fixtures", fixtures, "Test fixture directory")->required();
  app.add_option("--work", work, "Scratch directory")->required();
  CLI11_PARSE(app, argc, argv);

  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<Criterion> criteria{
      {"kernel oracle suite", 60.0, kernels},
      {"AUROC equivalence", 0.0, auroc},
      {"gradient correctness", 0.0, gradients},
      {"Adam trace", 0.0, adam},
      {"end-to-end scaled experiment", 30.0, end_to_end},
      {"container format", 0.0, [&](Outcome& o) { container(o, work); }},
      {"parameter accounting", 0.0, parameters},
      {"CLI pipeline smoke", 60.0, [&](Outcome& o) { cli_smoke(o, cli, fixtures, work); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome out;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0.0) out.require(seconds < c.time_limit_s, "runtime limit");
    std::cout << (out.pass ? "PASS" : "FAIL") << "  " << c.name << "  (" << fmt(seconds) << " s)  "
              << out.detail.str() << std::endl;
    failures += out.pass ? 0 : 1;
  }
  std::cout << (failures ? "FAIL" : "PASS") << "  " << criteria.size() - static_cast<std::size_t>(failures)
            << "/" << criteria.size() << " criteria" << std::endl;
  return failures ? 1 : 0;
}
