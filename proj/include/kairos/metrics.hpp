#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kairos/checkpoint.hpp"

namespace kairos::metrics {

// Mann–Whitney AUROC: the fraction of (positive, negative) pairs in which the
// positive scores higher, ties counting one half. Sort-based, O(n log n), and
// exact: the tie-corrected pair count is accumulated in integers.
// Throws DataError unless both classes are present.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Predict 1 iff probability >= threshold.
Confusion confusion_at_threshold(std::span<const double> probabilities,
                                 std::span<const std::uint8_t> labels,
                                 double threshold = 0.5);

// Σ numel over entries whose name starts with `prefix` ("" matches all).
std::size_t count_parameters(const checkpoint::TensorMap& tensors,
                             const std::string& prefix = "");

// "11.53"-style rendering of a parameter count in millions.
std::string format_millions(std::size_t count);

struct ParameterCounts {
  std::size_t encoder = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

struct LatencySummary {
  std::vector<double> durations_ms;
  double p50 = 0.0;
  double p90 = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

// Nearest-rank percentile: the ceil(p/100 · n)-th smallest value (1-based),
// computed in integer arithmetic.
double nearest_rank(std::span<const double> sorted, unsigned percent);

LatencySummary summarize(std::vector<double> durations_ms);

struct BenchReport {
  std::size_t warmup = 0;
  std::size_t iterations = 0;
  LatencySummary latency;
  ParameterCounts parameters;
};

// Milliseconds from an arbitrary monotonic origin.
using Clock = std::function<double()>;
Clock steady_clock_ms();

// Runs `warmup` untimed calls, then `iterations` timed calls, each timed
// individually with `clock`. Throws ConfigError when iterations == 0.
BenchReport latency_bench(const std::function<void()>& runner, std::size_t warmup,
                          std::size_t iterations, const Clock& clock = steady_clock_ms());

}  // namespace kairos::metrics
