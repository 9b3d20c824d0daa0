#include <cmath>

#include <json.hpp>

#include "kairos/encoder.hpp"
#include "kairos/error.hpp"

namespace kairos::encoder {

namespace {

using nlohmann::json;

constexpr std::array<float, 3> kPixelMean{123.675f, 116.28f, 103.53f};
constexpr std::array<float, 3> kPixelStd{58.395f, 57.12f, 57.375f};

StageConfig conv_stage(std::size_t dim, std::size_t depth, std::size_t merge) {
  StageConfig s;
  s.kind = StageKind::kConv;
  s.dim = dim;
  s.depth = depth;
  s.merge_stride = merge;
  return s;
}

StageConfig attention_stage(std::size_t dim, std::size_t depth,
                            std::size_t heads, std::size_t window,
                            std::size_t merge) {
  StageConfig s;
  s.kind = StageKind::kAttention;
  s.dim = dim;
  s.depth = depth;
  s.num_heads = heads;
  s.window_size = window;
  s.merge_stride = merge;
  return s;
}

}  // namespace

std::size_t EncoderConfig::reduction() const {
  std::size_t r = 4;
  for (std::size_t i = 0; i + 1 < stages.size(); ++i) r *= stages[i].merge_stride;
  return r;
}

std::size_t EncoderConfig::output_resolution() const {
  return input_resolution / reduction();
}

Shape EncoderConfig::output_shape() const {
  const auto r = output_resolution();
  return {out_channels, r, r};
}

void validate_config(const EncoderConfig& c) {
  auto fail = [&](const std::string& what) {
    throw ConfigError("encoder config \"" + c.name + "\": " + what);
  };
  if (c.stages.empty()) fail("needs at least one stage");
  if (c.stages.front().kind != StageKind::kConv) {
    fail("first stage must be convolutional");
  }
  if (c.stages.front().dim < 2 || c.stages.front().dim % 2 != 0) {
    fail("first stage width must be even (stem halves it)");
  }
  if (c.input_resolution == 0 || c.input_resolution % 4 != 0) {
    fail("input resolution must be a positive multiple of 4");
  }
  if (c.out_channels == 0) fail("out_channels must be positive");
  if (c.local_conv_size == 0 || c.local_conv_size % 2 == 0) {
    fail("local_conv_size must be odd");
  }
  if (!(c.layer_norm_eps > 0.0f) || !(c.neck_norm_eps > 0.0f)) {
    fail("norm epsilons must be positive");
  }
  for (float s : c.pixel_std) {
    if (s == 0.0f) fail("pixel_std components must be nonzero");
  }
  std::size_t res = c.input_resolution / 4;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const auto& s = c.stages[i];
    const std::string where = "stage " + std::to_string(i) + ": ";
    if (s.dim == 0 || s.depth == 0) fail(where + "dim and depth must be positive");
    if (s.kind == StageKind::kConv) {
      if (static_cast<std::size_t>(s.dim * s.expand_ratio) == 0) {
        fail(where + "expand ratio yields zero hidden width");
      }
    } else {
      if (s.num_heads == 0 || s.dim % s.num_heads != 0) {
        fail(where + "dim must be divisible by num_heads");
      }
      if (s.window_size == 0) fail(where + "window size must be positive");
      if (static_cast<std::size_t>(s.dim * s.mlp_ratio) == 0) {
        fail(where + "mlp ratio yields zero hidden width");
      }
    }
    if (i + 1 < c.stages.size()) {
      if (s.merge_stride == 0 || res % s.merge_stride != 0) {
        fail(where + "merge stride must divide resolution " + std::to_string(res));
      }
      res /= s.merge_stride;
    }
  }
  if (c.input_resolution % c.reduction() != 0) {
    fail("input resolution not divisible by reduction factor");
  }
}

EncoderConfig named_config(const std::string& name) {
  EncoderConfig c;
  c.name = name;
  c.pixel_mean = kPixelMean;
  c.pixel_std = kPixelStd;
  if (name == "tiny-test") {
    c.input_resolution = 64;
    c.stages = {conv_stage(16, 2, 2), attention_stage(24, 1, 2, 4, 2),
                attention_stage(32, 1, 2, 3, 1)};
    c.out_channels = 32;
  } else if (name == "mobilesam-v1") {
    c.input_resolution = 1024;
    c.stages = {conv_stage(64, 2, 2), attention_stage(128, 2, 4, 7, 2),
                attention_stage(160, 6, 5, 14, 1),
                attention_stage(320, 2, 10, 7, 1)};
    c.out_channels = 256;
  } else {
    throw ConfigError("unknown encoder config \"" + name + "\"");
  }
  validate_config(c);
  return c;
}

std::vector<std::string> named_config_names() { return {"tiny-test", "mobilesam-v1"}; }

std::string config_to_json(const EncoderConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) {
    json j = {{"kind", s.kind == StageKind::kConv ? "conv" : "attention"},
              {"dim", s.dim},
              {"depth", s.depth},
              {"merge_stride", s.merge_stride}};
    if (s.kind == StageKind::kConv) {
      j["expand_ratio"] = s.expand_ratio;
    } else {
      j["num_heads"] = s.num_heads;
      j["window_size"] = s.window_size;
      j["mlp_ratio"] = s.mlp_ratio;
    }
    stages.push_back(std::move(j));
  }
  const json doc = {{"name", c.name},
                    {"input_resolution", c.input_resolution},
                    {"stages", stages},
                    {"out_channels", c.out_channels},
                    {"local_conv_size", c.local_conv_size},
                    {"layer_norm_eps", c.layer_norm_eps},
                    {"neck_norm_eps", c.neck_norm_eps},
                    {"pixel_mean", c.pixel_mean},
                    {"pixel_std", c.pixel_std}};
  return doc.dump();
}

EncoderConfig config_from_json(const std::string& text) {
  EncoderConfig c;
  try {
    const json doc = json::parse(text);
    c.name = doc.at("name").get<std::string>();
    c.input_resolution = doc.at("input_resolution").get<std::size_t>();
    c.out_channels = doc.at("out_channels").get<std::size_t>();
    c.local_conv_size = doc.value("local_conv_size", std::size_t{3});
    c.layer_norm_eps = doc.value("layer_norm_eps", 1e-5f);
    c.neck_norm_eps = doc.value("neck_norm_eps", 1e-6f);
    c.pixel_mean = doc.at("pixel_mean").get<std::array<float, 3>>();
    c.pixel_std = doc.at("pixel_std").get<std::array<float, 3>>();
    for (const auto& j : doc.at("stages")) {
      StageConfig s;
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "conv") {
        s.kind = StageKind::kConv;
        s.expand_ratio = j.value("expand_ratio", 4.0);
      } else if (kind == "attention") {
        s.kind = StageKind::kAttention;
        s.num_heads = j.at("num_heads").get<std::size_t>();
        s.window_size = j.at("window_size").get<std::size_t>();
        s.mlp_ratio = j.value("mlp_ratio", 4.0);
      } else {
        throw ConfigError("unknown stage kind \"" + kind + "\"");
      }
      s.dim = j.at("dim").get<std::size_t>();
      s.depth = j.at("depth").get<std::size_t>();
      s.merge_stride = j.value("merge_stride", std::size_t{2});
      c.stages.push_back(s);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed encoder config JSON: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::map<std::string, Shape> expected_weight_shapes(const EncoderConfig& c) {
  validate_config(c);
  std::map<std::string, Shape> shapes;
  auto conv = [&](const std::string& prefix, std::size_t out, std::size_t in,
                  std::size_t k, bool with_bias = true) {
    shapes[prefix + ".weight"] = {out, in, k, k};
    if (with_bias) shapes[prefix + ".bias"] = {out};
  };
  auto dense = [&](const std::string& prefix, std::size_t out, std::size_t in) {
    shapes[prefix + ".weight"] = {out, in};
    shapes[prefix + ".bias"] = {out};
  };
  auto norm = [&](const std::string& prefix, std::size_t dim) {
    shapes[prefix + ".weight"] = {dim};
    shapes[prefix + ".bias"] = {dim};
  };

  const std::size_t c0 = c.stages.front().dim;
  conv("encoder.stem.conv1", c0 / 2, 3, 3);
  conv("encoder.stem.conv2", c0, c0 / 2, 3);

  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const auto& s = c.stages[i];
    const std::string stage = "encoder.stages." + std::to_string(i);
    for (std::size_t j = 0; j < s.depth; ++j) {
      const std::string block = stage + ".blocks." + std::to_string(j);
      if (s.kind == StageKind::kConv) {
        const auto hidden = static_cast<std::size_t>(s.dim * s.expand_ratio);
        conv(block + ".conv1", hidden, s.dim, 1);
        conv(block + ".conv2", hidden, 1, 3);
        conv(block + ".conv3", s.dim, hidden, 1);
      } else {
        const auto hidden = static_cast<std::size_t>(s.dim * s.mlp_ratio);
        norm(block + ".attn.norm", s.dim);
        dense(block + ".attn.qkv", 3 * s.dim, s.dim);
        dense(block + ".attn.proj", s.dim, s.dim);
        shapes[block + ".attn.bias_table"] = {s.num_heads,
                                              s.window_size * s.window_size};
        conv(block + ".local_conv", s.dim, 1, c.local_conv_size);
        norm(block + ".mlp.norm", s.dim);
        dense(block + ".mlp.fc1", hidden, s.dim);
        dense(block + ".mlp.fc2", s.dim, hidden);
      }
    }
    if (i + 1 < c.stages.size()) {
      const std::size_t out = c.stages[i + 1].dim;
      conv(stage + ".merge.conv1", out, s.dim, 1);
      conv(stage + ".merge.conv2", out, 1, 3);
      conv(stage + ".merge.conv3", out, out, 1);
    }
  }

  conv("encoder.neck.conv1", c.out_channels, c.stages.back().dim, 1, false);
  norm("encoder.neck.norm1", c.out_channels);
  conv("encoder.neck.conv2", c.out_channels, c.out_channels, 3, false);
  norm("encoder.neck.norm2", c.out_channels);
  return shapes;
}

}  // namespace kairos::encoder
