#include "kairos/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "kairos/error.hpp"
#include "kairos/ops.hpp"
#include "kairos/rng.hpp"

namespace kairos::encoder {

namespace {

using ops::Activation;

constexpr std::string_view kPrefix = "encoder.";

// 1×C×H×W <-> (H·W)×C
Tensor to_tokens(const Tensor& map) {
  const std::size_t c = map.extent(1), h = map.extent(2), w = map.extent(3);
  return ops::transpose2d(map.reshaped({c, h * w}));
}

Tensor to_map(const Tensor& tokens, std::size_t h, std::size_t w) {
  const std::size_t c = tokens.extent(1);
  return ops::transpose2d(tokens).reshaped({1, c, h, w});
}

class Forward {
 public:
  explicit Forward(const EncoderWeights& weights)
      : w_(weights), config_(weights.config()) {}

  Tensor run(const Tensor& x) const {
    const std::size_t s = config_.input_resolution;
    if (x.shape() != Shape{1, 3, s, s}) {
      throw DimensionError("encode: input must be " +
                           shape_to_string({1, 3, s, s}) + ", got " +
                           shape_to_string(x.shape()));
    }
    Tensor y = conv("encoder.stem.conv1", x, {2, 2}, {1, 1});
    ops::activation_inplace(y, Activation::kGelu);
    y = conv("encoder.stem.conv2", y, {2, 2}, {1, 1});

    for (std::size_t i = 0; i < config_.stages.size(); ++i) {
      const auto& stage = config_.stages[i];
      const std::string prefix = "encoder.stages." + std::to_string(i);
      for (std::size_t j = 0; j < stage.depth; ++j) {
        const std::string block = prefix + ".blocks." + std::to_string(j);
        y = stage.kind == StageKind::kConv ? inverted_residual(block, y)
                                           : attention_block(block, stage, y);
      }
      if (i + 1 < config_.stages.size()) {
        y = merge(prefix + ".merge", y, stage.merge_stride);
      }
    }

    y = conv("encoder.neck.conv1", y, {1, 1}, {0, 0}, 1, false);
    y = norm2d("encoder.neck.norm1", y);
    y = conv("encoder.neck.conv2", y, {1, 1}, {1, 1}, 1, false);
    y = norm2d("encoder.neck.norm2", y);
    return std::move(y).reshaped(config_.output_shape());
  }

 private:
  Tensor conv(const std::string& name, const Tensor& x, ops::Pair stride,
              ops::Pair pad, std::size_t groups = 1, bool bias = true) const {
    std::optional<Tensor> b;
    if (bias) b = w_.at(name + ".bias");
    return ops::conv2d(x, w_.at(name + ".weight"), b, stride, pad, groups);
  }

  Tensor inverted_residual(const std::string& block, const Tensor& x) const {
    Tensor y = conv(block + ".conv1", x, {1, 1}, {0, 0});
    ops::activation_inplace(y, Activation::kGelu);
    y = conv(block + ".conv2", y, {1, 1}, {1, 1}, y.extent(1));
    ops::activation_inplace(y, Activation::kGelu);
    y = conv(block + ".conv3", y, {1, 1}, {0, 0});
    ops::add_inplace(y, x);
    ops::activation_inplace(y, Activation::kGelu);
    return y;
  }

  Tensor merge(const std::string& prefix, const Tensor& x,
               std::size_t stride) const {
    Tensor y = conv(prefix + ".conv1", x, {1, 1}, {0, 0});
    ops::activation_inplace(y, Activation::kGelu);
    y = conv(prefix + ".conv2", y, {stride, stride}, {1, 1}, y.extent(1));
    ops::activation_inplace(y, Activation::kGelu);
    return conv(prefix + ".conv3", y, {1, 1}, {0, 0});
  }

  Tensor norm2d(const std::string& name, const Tensor& x) const {
    const std::size_t c = x.extent(1), h = x.extent(2), w = x.extent(3);
    Tensor t = ops::layer_norm(to_tokens(x), c, w_.at(name + ".weight"),
                               w_.at(name + ".bias"), config_.neck_norm_eps);
    return to_map(t, h, w);
  }

  Tensor layer_norm(const std::string& name, const Tensor& tokens) const {
    return ops::layer_norm(tokens, tokens.extent(1), w_.at(name + ".weight"),
                           w_.at(name + ".bias"), config_.layer_norm_eps);
  }

  Tensor dense(const std::string& name, const Tensor& x) const {
    return ops::linear(x, w_.at(name + ".weight"), w_.at(name + ".bias"));
  }

  // Multi-head self-attention over exactly window² tokens with the learned
  // relative-position bias bias_table[h, |dy|·window + |dx|].
  Tensor window_attention(const std::string& block, const StageConfig& stage,
                          const Tensor& tokens) const {
    const std::size_t n = tokens.extent(0);
    const std::size_t heads = stage.num_heads;
    const std::size_t kd = stage.dim / heads;
    const std::size_t ws = stage.window_size;

    const Tensor normed = layer_norm(block + ".attn.norm", tokens);
    const Tensor qkv = dense(block + ".attn.qkv", normed);

    // Per token, each head owns a contiguous [q | k | v] run of 3·kd values.
    Tensor q({heads, n, kd}), k({heads, n, kd}), v({heads, n, kd});
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t h = 0; h < heads; ++h) {
        const float* src = qkv.data().data() + t * 3 * stage.dim + h * 3 * kd;
        const std::size_t dst = (h * n + t) * kd;
        std::copy_n(src, kd, q.data().data() + dst);
        std::copy_n(src + kd, kd, k.data().data() + dst);
        std::copy_n(src + 2 * kd, kd, v.data().data() + dst);
      }
    }

    const Tensor& table = w_.at(block + ".attn.bias_table");
    Tensor bias({heads, n, n});
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t dy = i / ws > j / ws ? i / ws - j / ws : j / ws - i / ws;
          const std::size_t dx = i % ws > j % ws ? i % ws - j % ws : j % ws - i % ws;
          bias[(h * n + i) * n + j] = table[h * ws * ws + dy * ws + dx];
        }
      }
    }

    const Tensor attn = ops::scaled_dot_product_attention(q, k, v, bias);
    Tensor merged({n, heads * kd});
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        std::copy_n(attn.data().data() + (h * n + t) * kd, kd,
                    merged.data().data() + t * heads * kd + h * kd);
      }
    }
    return dense(block + ".attn.proj", merged);
  }

  Tensor attention_block(const std::string& block, const StageConfig& stage,
                         const Tensor& map) const {
    const std::size_t c = map.extent(1), h = map.extent(2), w = map.extent(3);
    const std::size_t ws = stage.window_size;
    Tensor tokens = to_tokens(map);

    Tensor attended({h * w, c});
    if (h == ws && w == ws) {
      attended = window_attention(block, stage, tokens);
    } else {
      // Zero-pad up to a multiple of the window, attend per window, crop.
      const std::size_t ph = (h + ws - 1) / ws * ws;
      const std::size_t pw = (w + ws - 1) / ws * ws;
      Tensor window({ws * ws, c});
      for (std::size_t wy = 0; wy < ph / ws; ++wy) {
        for (std::size_t wx = 0; wx < pw / ws; ++wx) {
          std::fill(window.data().begin(), window.data().end(), 0.0f);
          for (std::size_t r = 0; r < ws; ++r) {
            for (std::size_t q = 0; q < ws; ++q) {
              const std::size_t y = wy * ws + r, x = wx * ws + q;
              if (y >= h || x >= w) continue;
              std::copy_n(tokens.data().data() + (y * w + x) * c, c,
                          window.data().data() + (r * ws + q) * c);
            }
          }
          const Tensor out = window_attention(block, stage, window);
          for (std::size_t r = 0; r < ws; ++r) {
            for (std::size_t q = 0; q < ws; ++q) {
              const std::size_t y = wy * ws + r, x = wx * ws + q;
              if (y >= h || x >= w) continue;
              std::copy_n(out.data().data() + (r * ws + q) * c, c,
                          attended.data().data() + (y * w + x) * c);
            }
          }
        }
      }
    }
    ops::add_inplace(tokens, attended);

    const std::size_t k = config_.local_conv_size;
    Tensor local = conv(block + ".local_conv", to_map(tokens, h, w), {1, 1},
                        {k / 2, k / 2}, c);
    tokens = to_tokens(local);

    Tensor hidden = dense(block + ".mlp.fc1", layer_norm(block + ".mlp.norm", tokens));
    ops::activation_inplace(hidden, Activation::kGelu);
    ops::add_inplace(tokens, dense(block + ".mlp.fc2", hidden));
    return to_map(tokens, h, w);
  }

  const EncoderWeights& w_;
  const EncoderConfig& config_;
};

}  // namespace

EncoderWeights::EncoderWeights(EncoderConfig config,
                               const checkpoint::TensorMap& tensors)
    : config_(std::move(config)) {
  const auto expected = expected_weight_shapes(config_);
  for (const auto& [name, shape] : expected) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ValidationError("missing encoder weight \"" + name + "\"");
    }
    if (it->second.shape() != shape) {
      throw ValidationError("encoder weight \"" + name + "\" has shape " +
                            shape_to_string(it->second.shape()) + ", expected " +
                            shape_to_string(shape));
    }
    tensors_.emplace(name, it->second);
  }
  for (const auto& [name, tensor] : tensors) {
    if (name.starts_with(kPrefix) && !expected.contains(name)) {
      throw ValidationError("unexpected encoder weight \"" + name + "\" for config \"" +
                            config_.name + "\"");
    }
  }
}

const Tensor& EncoderWeights::at(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ValidationError("missing encoder weight \"" + name + "\"");
  return it->second;
}

checkpoint::TensorMap random_weights(const EncoderConfig& config,
                                     std::uint64_t seed) {
  Rng rng(seed);
  checkpoint::TensorMap out;
  for (const auto& [name, shape] : expected_weight_shapes(config)) {
    Tensor t(shape);
    const bool is_norm = name.find("norm") != std::string::npos;
    if (name.ends_with(".bias") || name.ends_with(".bias_table")) {
      // zeros
    } else if (is_norm) {
      std::fill(t.data().begin(), t.data().end(), 1.0f);
    } else {
      std::size_t fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    out.emplace(name, std::move(t));
  }
  return out;
}

Tensor preprocess_image(const Image& image, std::size_t resolution,
                        const std::array<float, 3>& mean,
                        const std::array<float, 3>& std) {
  for (float s : std) {
    if (s == 0.0f) throw ConfigError("preprocess: std components must be nonzero");
  }
  if (image.channels != 1 && image.channels != 3) {
    throw DimensionError("preprocess: image must have 1 or 3 channels, got " +
                         std::to_string(image.channels));
  }
  if (image.height == 0 || image.width == 0 || resolution == 0) {
    throw DimensionError("preprocess: empty image or resolution");
  }
  const std::size_t s = resolution;
  Tensor out({1, 3, s, s});
  const double sy = static_cast<double>(image.height) / static_cast<double>(s);
  const double sx = static_cast<double>(image.width) / static_cast<double>(s);

  auto source_coord = [](std::size_t o, double scale, std::size_t extent,
                         std::size_t& i0, std::size_t& i1, double& frac) {
    double c = (static_cast<double>(o) + 0.5) * scale - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(c));
    i1 = std::min(i0 + 1, extent - 1);
    frac = c - static_cast<double>(i0);
  };

  for (std::size_t y = 0; y < s; ++y) {
    std::size_t y0, y1;
    double fy;
    source_coord(y, sy, image.height, y0, y1, fy);
    for (std::size_t x = 0; x < s; ++x) {
      std::size_t x0, x1;
      double fx;
      source_coord(x, sx, image.width, x0, x1, fx);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const std::size_t src = image.channels == 1 ? 0 : ch;
        const double top = image.at(y0, x0, src) * (1.0 - fx) + image.at(y0, x1, src) * fx;
        const double bot = image.at(y1, x0, src) * (1.0 - fx) + image.at(y1, x1, src) * fx;
        const double v = top * (1.0 - fy) + bot * fy;
        out[(ch * s + y) * s + x] =
            static_cast<float>((v - mean[ch]) / static_cast<double>(std[ch]));
      }
    }
  }
  return out;
}

Tensor encode(const Tensor& x, const EncoderWeights& weights) {
  return Forward(weights).run(x);
}

PoolingMode pooling_from_string(const std::string& s) {
  if (s == "mean") return PoolingMode::kMean;
  if (s == "flatten") return PoolingMode::kFlatten;
  throw ConfigError("unknown pooling mode \"" + s + "\" (expected mean|flatten)");
}

std::string to_string(PoolingMode mode) {
  return mode == PoolingMode::kMean ? "mean" : "flatten";
}

EmbeddingVector pool_embedding(const Tensor& features, PoolingMode mode) {
  if (features.rank() != 3) {
    throw DimensionError("pool_embedding: features must be C×h×w, got " +
                         shape_to_string(features.shape()));
  }
  EmbeddingVector e;
  if (mode == PoolingMode::kFlatten) {
    e.values = features.values();
    return e;
  }
  const std::size_t c = features.extent(0);
  const std::size_t plane = features.extent(1) * features.extent(2);
  e.values.resize(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += features[ch * plane + i];
    e.values[ch] = static_cast<float>(sum / static_cast<double>(plane));
  }
  return e;
}

std::size_t embedding_dim(const EncoderConfig& config, PoolingMode mode) {
  return mode == PoolingMode::kMean ? config.out_channels
                                    : shape_numel(config.output_shape());
}

}  // namespace kairos::encoder
