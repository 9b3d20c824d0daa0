#include "kairos/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "kairos/error.hpp"
#include "kairos/ops.hpp"

namespace kairos::trainer {

namespace {

// log(1 + e^x) without overflow.
double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void check_batch(const LossBatch& batch) {
  if (batch.logits.size() != batch.labels.size()) {
    throw DimensionError("loss batch: " + std::to_string(batch.logits.size()) +
                         " logits vs " + std::to_string(batch.labels.size()) + " labels");
  }
  if (batch.logits.empty()) throw DataError("loss batch is empty");
  if (!(batch.positive_weight > 0.0)) {
    throw ConfigError("positive-class weight must be > 0");
  }
  for (auto y : batch.labels) {
    if (y > 1) throw DataError("labels must be 0 or 1");
  }
}

}  // namespace

void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (c.batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
  if (!(c.beta1 > 0.0 && c.beta1 < 1.0) || !(c.beta2 > 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in (0, 1)");
  }
  if (!(c.epsilon > 0.0)) throw ConfigError("train: Adam epsilon must be > 0");
  if (c.class_weight_override && !(*c.class_weight_override > 0.0)) {
    throw ConfigError("train: class_weight_override must be > 0");
  }
}

double class_weight(std::span<const std::uint8_t> labels) {
  std::size_t pos = 0, neg = 0;
  for (auto y : labels) (y ? pos : neg) += 1;
  if (pos == 0) {
    throw DataError("class weight undefined: no positive (anomalous) samples");
  }
  return static_cast<double>(neg) / static_cast<double>(pos);
}

double wbce_loss(const LossBatch& batch) {
  check_batch(batch);
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.logits.size(); ++i) {
    const double s = batch.logits[i];
    sum += batch.labels[i] ? batch.positive_weight * softplus(-s) : softplus(s);
  }
  return sum / static_cast<double>(batch.logits.size());
}

std::vector<double> wbce_grad_logits(const LossBatch& batch) {
  check_batch(batch);
  const double inv_n = 1.0 / static_cast<double>(batch.logits.size());
  std::vector<double> g(batch.logits.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double p = ops::sigmoid(batch.logits[i]);
    g[i] = inv_n * (batch.labels[i] ? batch.positive_weight * (p - 1.0) : p);
  }
  return g;
}

HeadGrads head_backward(const Tensor& embeddings, const head::HeadWeights& weights,
                        std::span<const float> grad_logits) {
  const std::size_t layers = weights.layers.size();
  if (layers == 0) throw ConfigError("head: no layers");
  if (embeddings.rank() != 2 || embeddings.extent(1) != weights.input_dim()) {
    throw DimensionError("head_backward: embeddings must be N×" +
                         std::to_string(weights.input_dim()));
  }
  const std::size_t n = embeddings.extent(0);
  if (grad_logits.size() != n) {
    throw DimensionError("head_backward: " + std::to_string(grad_logits.size()) +
                         " logit gradients for " + std::to_string(n) + " samples");
  }

  // activations[i] is the input to layer i; pre[i] its pre-activation output.
  std::vector<Tensor> activations{embeddings};
  std::vector<Tensor> pre;
  for (std::size_t i = 0; i < layers; ++i) {
    pre.push_back(ops::linear(activations.back(), weights.layers[i].weight,
                              weights.layers[i].bias));
    if (i + 1 < layers) {
      activations.push_back(ops::activation(pre.back(), ops::Activation::kRelu));
    }
  }

  HeadGrads grads(layers);
  Tensor delta({n, 1}, std::vector<float>(grad_logits.begin(), grad_logits.end()));
  for (std::size_t li = layers; li-- > 0;) {
    const Tensor& w = weights.layers[li].weight;
    const Tensor& a = activations[li];
    const std::size_t out = w.extent(0), in = w.extent(1);

    Tensor gw({out, in});
    Tensor gb({out});
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t s = 0; s < n; ++s) {
        const float d = delta[s * out + o];
        gb[o] += d;
        for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += d * a[s * in + i];
      }
    }
    grads[li] = {std::move(gw), std::move(gb)};

    if (li > 0) {
      const Tensor& z = pre[li - 1];
      Tensor next({n, in});
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < in; ++i) {
          if (!(z[s * in + i] > 0.0f)) continue;
          float acc = 0.0f;
          for (std::size_t o = 0; o < out; ++o) acc += delta[s * out + o] * w[o * in + i];
          next[s * in + i] = acc;
        }
      }
      delta = std::move(next);
    }
  }
  return grads;
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state,
               const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and state sizes differ");
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(config.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(config.beta2, t));
  const T lr = static_cast<T>(config.learning_rate);
  const T eps = static_cast<T>(config.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T m_hat = state.m[i] / c1;
    const T v_hat = state.v[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template void adam_step<float>(std::span<float>, std::span<const float>,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                AdamState<double>&, const AdamConfig&);

TrainResult train_head(const Tensor& embeddings, std::span<const std::uint8_t> labels,
                       const head::HeadConfig& head_config, const TrainConfig& config) {
  validate(config);
  head::validate(head_config);
  if (embeddings.rank() != 2 || embeddings.extent(0) != labels.size()) {
    throw DimensionError("train_head: embeddings must be N×d with one label per row");
  }
  if (embeddings.extent(1) != head_config.input_dim) {
    throw DimensionError("train_head: embedding dim " + std::to_string(embeddings.extent(1)) +
                         " != head input_dim " + std::to_string(head_config.input_dim));
  }
  std::size_t positives = 0;
  for (auto y : labels) positives += y ? 1 : 0;
  if (positives == 0 || positives == labels.size()) {
    throw DataError("training requires at least one sample of each class (" +
                    std::to_string(labels.size() - positives) + " normal, " +
                    std::to_string(positives) + " anomalous)");
  }

  TrainResult result;
  result.positive_weight =
      config.class_weight_override ? *config.class_weight_override : class_weight(labels);
  result.weights = head::head_init(head_config, config.seed);

  const AdamConfig adam{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  std::vector<AdamState<float>> states;
  for (const auto& layer : result.weights.layers) {
    states.emplace_back(layer.weight.numel());
    states.emplace_back(layer.bias.numel());
  }

  const std::size_t n = labels.size();
  const std::size_t d = embeddings.extent(1);
  Rng rng(config.seed + 1);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = shuffled_indices(n, rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - begin);
      Tensor batch({count, d});
      std::vector<std::uint8_t> batch_labels(count);
      for (std::size_t r = 0; r < count; ++r) {
        const std::size_t src = order[begin + r];
        std::copy_n(embeddings.data().data() + src * d, d, batch.data().data() + r * d);
        batch_labels[r] = labels[src];
      }
      const auto logits_f = head::head_forward(batch, result.weights);
      const std::vector<double> logits(logits_f.begin(), logits_f.end());
      const LossBatch lb{logits, batch_labels, result.positive_weight};
      loss_sum += wbce_loss(lb) * static_cast<double>(count);
      const auto g = wbce_grad_logits(lb);
      const std::vector<float> g_f(g.begin(), g.end());
      const auto grads = head_backward(batch, result.weights, g_f);
      for (std::size_t li = 0; li < grads.size(); ++li) {
        auto& layer = result.weights.layers[li];
        adam_step<float>(layer.weight.data(), grads[li].weight.data(), states[2 * li], adam);
        adam_step<float>(layer.bias.data(), grads[li].bias.data(), states[2 * li + 1], adam);
      }
    }
    const auto stop = std::chrono::steady_clock::now();
    result.history.push_back(
        {epoch, loss_sum / static_cast<double>(n),
         std::chrono::duration<double, std::milli>(stop - start).count()});
  }
  return result;
}

std::string history_to_jsonl(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  for (const auto& rec : history) {
    const nlohmann::json line = {
        {"epoch", rec.epoch}, {"mean_loss", rec.mean_loss}, {"wall_ms", rec.wall_ms}};
    os << line.dump() << '\n';
  }
  return os.str();
}

}  // namespace kairos::trainer
