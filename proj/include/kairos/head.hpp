#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kairos/checkpoint.hpp"
#include "kairos/tensor.hpp"

// Anomaly-score head: N_l fully connected layers with ReLU between them and
// no activation on the final scalar logit.
namespace kairos::head {

struct HeadConfig {
  std::size_t num_layers = 2;
  std::vector<std::size_t> hidden_dims;  // num_layers - 1 entries
  std::size_t input_dim = 0;

  // Layer widths from input to the scalar output: {d, hidden..., 1}.
  std::vector<std::size_t> dims() const;
};

// hidden = [d] for two layers, [d, d/2] for three, and d halved per extra
// layer beyond that (never below 1).
HeadConfig default_config(std::size_t input_dim, std::size_t num_layers);

void validate(const HeadConfig& config);

struct Layer {
  Tensor weight;  // out × in
  Tensor bias;    // out
};

struct HeadWeights {
  std::vector<Layer> layers;

  std::size_t input_dim() const;
  std::size_t parameter_count() const;
};

// Weights U(-sqrt(1/fan_in), sqrt(1/fan_in)) drawn layer by layer in
// row-major order from Rng(seed); biases zero.
HeadWeights head_init(const HeadConfig& config, std::uint64_t seed);

// embeddings N×d -> one logit per row.
std::vector<float> head_forward(const Tensor& embeddings, const HeadWeights& weights);

struct AnomalyScore {
  double logit = 0.0;
  double probability = 0.5;
};

AnomalyScore score_from_logit(double logit);

// Container names `head.layers.<i>.weight` / `head.layers.<i>.bias`.
void store(const HeadWeights& weights, checkpoint::TensorMap& tensors);
HeadWeights load(const checkpoint::TensorMap& tensors, const HeadConfig& config);

inline constexpr const char* kConfigMetadataKey = "head_config";
std::string config_to_json(const HeadConfig& config);
HeadConfig config_from_json(const std::string& text);

}  // namespace kairos::head
