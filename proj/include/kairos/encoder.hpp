#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "kairos/checkpoint.hpp"
#include "kairos/image.hpp"
#include "kairos/tensor.hpp"

// Semantic feature encoder: a hybrid conv/transformer image encoder in the
// MobileSAM (TinyViT) style, run forward only with weights loaded from a
// TensorContainer.
//
// Graph, for an S×S RGB input:
//
//   stem      conv3x3/2 -> GELU -> conv3x3/2                    (S/4)
//   stage i   kind == conv:      `depth` inverted-residual blocks
//             kind == attention: `depth` windowed-attention blocks
//             then, unless last, a patch-merging block into stage i+1
//             (1x1 -> GELU -> depthwise 3x3/stride -> GELU -> 1x1)
//   neck      conv1x1 (no bias) -> LN2d -> conv3x3 (no bias) -> LN2d
//
// Convolution + batch-norm pairs of the upstream graph are stored folded into
// a single conv weight and bias.
namespace kairos::encoder {

enum class StageKind { kConv, kAttention };

struct StageConfig {
  StageKind kind = StageKind::kConv;
  std::size_t dim = 0;
  std::size_t depth = 0;
  // conv stages
  double expand_ratio = 4.0;
  // attention stages
  std::size_t num_heads = 1;
  std::size_t window_size = 7;
  double mlp_ratio = 4.0;
  // Stride of the merge block that leaves this stage; ignored for the last.
  std::size_t merge_stride = 2;
};

struct EncoderConfig {
  std::string name;
  std::size_t input_resolution = 0;
  std::vector<StageConfig> stages;
  std::size_t out_channels = 0;
  std::size_t local_conv_size = 3;
  float layer_norm_eps = 1e-5f;
  float neck_norm_eps = 1e-6f;
  std::array<float, 3> pixel_mean{};
  std::array<float, 3> pixel_std{};

  // Product of every spatial reduction from input to feature map.
  std::size_t reduction() const;
  std::size_t output_resolution() const;
  Shape output_shape() const;
};

// Throws ConfigError naming the first violated constraint.
void validate_config(const EncoderConfig& config);

// `tiny-test` (S=64, C_e=32) and `mobilesam-v1` (S=1024, C_e=256).
EncoderConfig named_config(const std::string& name);
std::vector<std::string> named_config_names();

std::string config_to_json(const EncoderConfig& config);
EncoderConfig config_from_json(const std::string& text);

// Every tensor name the graph reads, with its exact shape. Names use the
// scheme `encoder.<part>.<index>.<sublayer>.<tensor>`, e.g.
// `encoder.stages.1.blocks.0.attn.qkv.weight`.
std::map<std::string, Shape> expected_weight_shapes(const EncoderConfig& config);

// Immutable, validated weights for one config.
class EncoderWeights {
 public:
  // Throws ValidationError naming the first missing, mis-shaped or extra
  // tensor. Tensors outside the `encoder.` prefix are ignored.
  EncoderWeights(EncoderConfig config, const checkpoint::TensorMap& tensors);

  const EncoderConfig& config() const noexcept { return config_; }
  const Tensor& at(const std::string& name) const;
  const checkpoint::TensorMap& tensors() const noexcept { return tensors_; }

 private:
  EncoderConfig config_;
  checkpoint::TensorMap tensors_;
};

// Seeded uniform weights with the exact expected shapes. Fills weights with
// U(-a, a), a = 1/sqrt(fan_in); norm gains 1, biases 0. For tests and smoke
// runs where no converted checkpoint is available.
checkpoint::TensorMap random_weights(const EncoderConfig& config,
                                     std::uint64_t seed);

// Metadata key under which the config JSON is stored in a container.
inline constexpr const char* kConfigMetadataKey = "encoder_config";

// Bilinear resize to S×S (half-pixel centers, edge clamp), replicate
// grayscale to 3 channels, then (pixel - mean) / std per channel.
// Returns 1×3×S×S.
Tensor preprocess_image(const Image& image, std::size_t resolution,
                        const std::array<float, 3>& mean,
                        const std::array<float, 3>& std);

// Forward pass. `x` is 1×3×S×S; returns C_e×(S/R)×(S/R).
Tensor encode(const Tensor& x, const EncoderWeights& weights);

enum class PoolingMode { kMean, kFlatten };

PoolingMode pooling_from_string(const std::string& s);
std::string to_string(PoolingMode mode);

struct EmbeddingVector {
  std::vector<float> values;
  std::size_t dim() const noexcept { return values.size(); }
};

// mean: per-channel spatial average (d = C_e); flatten: row-major (d = C_e·h·w).
EmbeddingVector pool_embedding(const Tensor& features, PoolingMode mode);

std::size_t embedding_dim(const EncoderConfig& config, PoolingMode mode);

}  // namespace kairos::encoder
