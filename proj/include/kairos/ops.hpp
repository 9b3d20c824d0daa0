#pragma once

#include <cstddef>
#include <optional>

#include "kairos/tensor.hpp"

// Deterministic float32 kernels used by the encoder and the scoring head.
//
// All kernels are pure functions. Reductions run in a fixed order per output
// element, so repeated calls on the same inputs give bit-identical results.
// Shapes must match exactly; the only broadcasts are the documented bias
// vectors.
namespace kairos::ops {

struct Pair {
  std::size_t h = 0;
  std::size_t w = 0;
};

// input N×C×H×W, weight O×(C/groups)×KH×KW, bias O. Zero padding only.
// groups == C gives a depthwise convolution.
Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, Pair stride = {1, 1},
              Pair padding = {0, 0}, std::size_t groups = 1);

// x N×Din, weight Dout×Din, bias Dout.
Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias);

// Normalizes each run of the last `normalized_extent` values with the
// population variance: (x - mean) / sqrt(var + epsilon) * gamma + beta.
Tensor layer_norm(const Tensor& x, std::size_t normalized_extent,
                  const Tensor& gamma, const Tensor& beta, float epsilon);

enum class Activation { kRelu, kGelu, kSigmoid };

// relu(x)    = max(x, 0)
// gelu(x)    = x/2 * (1 + erf(x/sqrt(2)))      (exact form, not tanh)
// sigmoid(x) = 1 / (1 + exp(-x)), evaluated without overflow for large |x|
Tensor activation(const Tensor& x, Activation kind);
void activation_inplace(Tensor& x, Activation kind);

float gelu(float x) noexcept;
float sigmoid(float x) noexcept;
double sigmoid(double x) noexcept;

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

// q, k: H×L×Dk, v: H×L×Dv, bias: H×L×L added to the scaled logits.
// Returns softmax(q·kᵀ/sqrt(Dk) + bias)·v per head, H×L×Dv.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                    const Tensor& v,
                                    const std::optional<Tensor>& bias);

// Elementwise a + b; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);

// 2-D transpose of an R×C tensor.
Tensor transpose2d(const Tensor& x);

}  // namespace kairos::ops
