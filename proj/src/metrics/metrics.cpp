#include "kairos/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "kairos/error.hpp"

namespace kairos::metrics {

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (double s : scores) {
    if (std::isnan(s)) throw DataError("auroc: NaN score");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the tie-corrected count of pairs (pos > neg), kept integral.
  std::uint64_t twice_wins = 0;
  std::uint64_t neg_below = 0, pos_total = 0, neg_total = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_wins += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    pos_total += pos;
    neg_total += neg;
    i = j;
  }
  if (pos_total == 0 || neg_total == 0) {
    throw DataError("auroc undefined: only one class present (" +
                    std::to_string(pos_total) + " positive, " +
                    std::to_string(neg_total) + " negative)");
  }
  return static_cast<double>(twice_wins) /
         (2.0 * static_cast<double>(pos_total) * static_cast<double>(neg_total));
}

Confusion confusion_at_threshold(std::span<const double> probabilities,
                                 std::span<const std::uint8_t> labels, double threshold) {
  if (probabilities.size() != labels.size()) {
    throw DimensionError("confusion: score and label counts differ");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = probabilities[i] >= threshold;
    if (labels[i]) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

std::size_t count_parameters(const checkpoint::TensorMap& tensors, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) {
    if (name.starts_with(prefix)) n += t.numel();
  }
  return n;
}

std::string format_millions(std::size_t count) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(count) / 1e6);
  return buf;
}

double nearest_rank(std::span<const double> sorted, unsigned percent) {
  if (sorted.empty()) throw DataError("percentile of an empty sample");
  const std::size_t n = sorted.size();
  std::size_t rank = (static_cast<std::size_t>(percent) * n + 99) / 100;
  rank = std::clamp<std::size_t>(rank, 1, n);
  return sorted[rank - 1];
}

LatencySummary summarize(std::vector<double> durations_ms) {
  LatencySummary s;
  s.durations_ms = durations_ms;
  std::sort(durations_ms.begin(), durations_ms.end());
  s.p50 = nearest_rank(durations_ms, 50);
  s.p90 = nearest_rank(durations_ms, 90);
  s.p95 = nearest_rank(durations_ms, 95);
  s.max = durations_ms.back();
  s.mean = std::accumulate(durations_ms.begin(), durations_ms.end(), 0.0) /
           static_cast<double>(durations_ms.size());
  return s;
}

Clock steady_clock_ms() {
  return [] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

BenchReport latency_bench(const std::function<void()>& runner, std::size_t warmup,
                          std::size_t iterations, const Clock& clock) {
  if (iterations == 0) throw ConfigError("bench: iterations must be >= 1");
  for (std::size_t i = 0; i < warmup; ++i) runner();
  std::vector<double> durations;
  durations.reserve(iterations);
  for (std::size_t i = 0; i < iterations; ++i) {
    const double start = clock();
    runner();
    durations.push_back(clock() - start);
  }
  BenchReport report;
  report.warmup = warmup;
  report.iterations = iterations;
  report.latency = summarize(std::move(durations));
  return report;
}

}  // namespace kairos::metrics
