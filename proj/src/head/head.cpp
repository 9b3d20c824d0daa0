#include "kairos/head.hpp"

#include <cmath>

#include <json.hpp>

#include "kairos/error.hpp"
#include "kairos/ops.hpp"
#include "kairos/rng.hpp"

namespace kairos::head {

std::vector<std::size_t> HeadConfig::dims() const {
  std::vector<std::size_t> d{input_dim};
  d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
  d.push_back(1);
  return d;
}

HeadConfig default_config(std::size_t input_dim, std::size_t num_layers) {
  HeadConfig c;
  c.num_layers = num_layers;
  c.input_dim = input_dim;
  std::size_t width = input_dim;
  for (std::size_t i = 0; i + 1 < num_layers; ++i) {
    c.hidden_dims.push_back(std::max<std::size_t>(width, 1));
    width /= 2;
  }
  validate(c);
  return c;
}

void validate(const HeadConfig& c) {
  if (c.num_layers == 0) throw ConfigError("head: num_layers must be >= 1");
  if (c.input_dim == 0) throw ConfigError("head: input_dim must be >= 1");
  if (c.hidden_dims.size() + 1 != c.num_layers) {
    throw ConfigError("head: expected " + std::to_string(c.num_layers - 1) +
                      " hidden widths, got " + std::to_string(c.hidden_dims.size()));
  }
  for (auto h : c.hidden_dims) {
    if (h == 0) throw ConfigError("head: hidden widths must be positive");
  }
}

std::size_t HeadWeights::input_dim() const {
  return layers.empty() ? 0 : layers.front().weight.extent(1);
}

std::size_t HeadWeights::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.numel() + l.bias.numel();
  return n;
}

HeadWeights head_init(const HeadConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(seed);
  const auto dims = config.dims();
  HeadWeights w;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t in = dims[i], out = dims[i + 1];
    const double bound = std::sqrt(1.0 / static_cast<double>(in));
    Tensor weight({out, in});
    for (auto& v : weight.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    w.layers.push_back({std::move(weight), Tensor({out})});
  }
  return w;
}

std::vector<float> head_forward(const Tensor& embeddings, const HeadWeights& weights) {
  if (weights.layers.empty()) throw ConfigError("head: no layers");
  if (embeddings.rank() != 2 || embeddings.extent(1) != weights.input_dim()) {
    throw DimensionError("head_forward: embeddings must be N×" +
                         std::to_string(weights.input_dim()) + ", got " +
                         shape_to_string(embeddings.shape()));
  }
  Tensor x = embeddings;
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    x = ops::linear(x, weights.layers[i].weight, weights.layers[i].bias);
    if (i + 1 < weights.layers.size()) ops::activation_inplace(x, ops::Activation::kRelu);
  }
  return x.values();
}

AnomalyScore score_from_logit(double logit) {
  return {logit, ops::sigmoid(logit)};
}

void store(const HeadWeights& weights, checkpoint::TensorMap& tensors) {
  for (std::size_t i = 0; i < weights.layers.size(); ++i) {
    const std::string prefix = "head.layers." + std::to_string(i);
    tensors.insert_or_assign(prefix + ".weight", weights.layers[i].weight);
    tensors.insert_or_assign(prefix + ".bias", weights.layers[i].bias);
  }
}

HeadWeights load(const checkpoint::TensorMap& tensors, const HeadConfig& config) {
  validate(config);
  const auto dims = config.dims();
  HeadWeights w;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string prefix = "head.layers." + std::to_string(i);
    const Shape ws{dims[i + 1], dims[i]}, bs{dims[i + 1]};
    auto fetch = [&](const std::string& name, const Shape& shape) {
      const auto it = tensors.find(name);
      if (it == tensors.end()) throw ValidationError("missing head weight \"" + name + "\"");
      if (it->second.shape() != shape) {
        throw ValidationError("head weight \"" + name + "\" has shape " +
                              shape_to_string(it->second.shape()) + ", expected " +
                              shape_to_string(shape));
      }
      return it->second;
    };
    w.layers.push_back({fetch(prefix + ".weight", ws), fetch(prefix + ".bias", bs)});
  }
  for (const auto& [name, t] : tensors) {
    if (name.starts_with("head.")) {
      const auto layer = name.substr(std::string("head.layers.").size());
      const auto dot = layer.find('.');
      bool known = name.starts_with("head.layers.") && dot != std::string::npos;
      if (known) {
        try {
          known = std::stoul(layer.substr(0, dot)) < w.layers.size();
        } catch (const std::exception&) {
          known = false;
        }
      }
      if (!known) throw ValidationError("unexpected head weight \"" + name + "\"");
    }
  }
  return w;
}

std::string config_to_json(const HeadConfig& c) {
  const nlohmann::json doc = {{"num_layers", c.num_layers},
                              {"hidden_dims", c.hidden_dims},
                              {"input_dim", c.input_dim}};
  return doc.dump();
}

HeadConfig config_from_json(const std::string& text) {
  HeadConfig c;
  try {
    const auto doc = nlohmann::json::parse(text);
    c.num_layers = doc.at("num_layers").get<std::size_t>();
    c.hidden_dims = doc.at("hidden_dims").get<std::vector<std::size_t>>();
    c.input_dim = doc.at("input_dim").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed head config JSON: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace kairos::head
