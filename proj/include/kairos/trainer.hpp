#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kairos/head.hpp"
#include "kairos/rng.hpp"
#include "kairos/tensor.hpp"

// Supervised training of the anomaly-score head with weighted binary
// cross-entropy and Adam.
namespace kairos::trainer {

struct TrainConfig {
  std::size_t epochs = 35;
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  std::optional<double> class_weight_override;
};

void validate(const TrainConfig& config);

// count(y = 0) / count(y = 1). Throws DataError when no positive is present.
double class_weight(std::span<const std::uint8_t> labels);

struct LossBatch {
  std::span<const double> logits;
  std::span<const std::uint8_t> labels;
  double positive_weight = 1.0;
};

// -(1/N) Σ [w·y·log σ(s) + (1-y)·log(1-σ(s))], evaluated as
// (1/N) Σ [w·y·softplus(-s) + (1-y)·softplus(s)] so saturated logits stay
// finite.
double wbce_loss(const LossBatch& batch);

// ∂L/∂s_i = (1/N)·[w·y_i·(σ(s_i) - 1) + (1 - y_i)·σ(s_i)]
std::vector<double> wbce_grad_logits(const LossBatch& batch);

struct LayerGrad {
  Tensor weight;
  Tensor bias;
};
using HeadGrads = std::vector<LayerGrad>;

// Reverse-mode gradients through the head for an N×d batch; grad_logits has
// one entry per row. The ReLU subgradient at 0 is 0.
HeadGrads head_backward(const Tensor& embeddings, const head::HeadWeights& weights,
                        std::span<const float> grad_logits);

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First and second moments for one parameter buffer, plus the step count.
template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

// One bias-corrected Adam step:
//   t += 1
//   m = β1·m + (1-β1)·g
//   v = β2·v + (1-β2)·g²
//   w -= lr · (m / (1-β1^t)) / (sqrt(v / (1-β2^t)) + ε)
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
               const AdamConfig& config);

extern template void adam_step<float>(std::span<float>, std::span<const float>,
                                      AdamState<float>&, const AdamConfig&);
extern template void adam_step<double>(std::span<double>, std::span<const double>,
                                       AdamState<double>&, const AdamConfig&);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  head::HeadWeights weights;
  std::vector<EpochRecord> history;
  double positive_weight = 1.0;
};

// Trains from head_init(head_config, config.seed). Each epoch visits samples
// in a seeded Fisher–Yates order (one generator for the whole run, seeded with
// config.seed + 1), in batches of batch_size with a final partial batch.
// mean_loss is the sample-weighted mean of the batch losses seen during the
// epoch.
TrainResult train_head(const Tensor& embeddings, std::span<const std::uint8_t> labels,
                       const head::HeadConfig& head_config, const TrainConfig& config);

std::string history_to_jsonl(const std::vector<EpochRecord>& history);

}  // namespace kairos::trainer
