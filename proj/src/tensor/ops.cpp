#include "kairos/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "kairos/error.hpp"

namespace kairos::ops {

namespace {

[[noreturn]] void dim_error(const std::string& op, const std::string& what) {
  throw DimensionError(op + ": " + what);
}

void require_rank(const std::string& op, const std::string& name,
                  const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    dim_error(op, name + " must have rank " + std::to_string(rank) + ", got " +
                      shape_to_string(t.shape()));
  }
}

// Fixed 8-lane dot product. The lane split and the final combination order
// are constant, so results do not depend on call site or alignment.
float dot(const float* a, const float* b, std::size_t n) noexcept {
  std::array<float, 8> acc{};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) +
          ((acc[4] + acc[5]) + (acc[6] + acc[7]))) +
         tail;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight,
              const std::optional<Tensor>& bias, Pair stride, Pair padding,
              std::size_t groups) {
  const std::string op = "conv2d";
  require_rank(op, "input", input, 4);
  require_rank(op, "weight", weight, 4);
  if (groups == 0) dim_error(op, "groups must be >= 1");
  if (stride.h == 0 || stride.w == 0) dim_error(op, "stride must be >= 1");

  const std::size_t n = input.extent(0), c = input.extent(1),
                    h = input.extent(2), w = input.extent(3);
  const std::size_t o = weight.extent(0), cg = weight.extent(1),
                    kh = weight.extent(2), kw = weight.extent(3);
  if (c % groups != 0) {
    dim_error(op, "input channel axis (1) extent " + std::to_string(c) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (o % groups != 0) {
    dim_error(op, "weight output-channel axis (0) extent " + std::to_string(o) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (cg != c / groups) {
    dim_error(op, "weight input-channel axis (1) extent " + std::to_string(cg) +
                      " != C/groups = " + std::to_string(c / groups));
  }
  if (h + 2 * padding.h < kh) {
    dim_error(op, "padded height (axis 2) smaller than kernel height");
  }
  if (w + 2 * padding.w < kw) {
    dim_error(op, "padded width (axis 3) smaller than kernel width");
  }
  if (bias) {
    if (bias->rank() != 1 || bias->extent(0) != o) {
      dim_error(op, "bias must be a vector of length " + std::to_string(o) +
                        ", got " + shape_to_string(bias->shape()));
    }
  }

  const std::size_t oh = (h + 2 * padding.h - kh) / stride.h + 1;
  const std::size_t ow = (w + 2 * padding.w - kw) / stride.w + 1;
  const std::size_t og = o / groups;

  Tensor out({n, o, oh, ow});
  const float* in = input.data().data();
  const float* wt = weight.data().data();
  float* dst = out.data().data();
  const auto ph = static_cast<std::ptrdiff_t>(padding.h);
  const auto pw = static_cast<std::ptrdiff_t>(padding.w);

  // Output-major: each output plane is accumulated over (ic, ky, kx) in
  // ascending order, which fixes the summation order of every element.
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < o; ++oc) {
      const std::size_t g = oc / og;
      float* plane = dst + ((b * o + oc) * oh) * ow;
      for (std::size_t icg = 0; icg < cg; ++icg) {
        const std::size_t ic = g * cg + icg;
        const float* src = in + ((b * c + ic) * h) * w;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const float k = wt[((oc * cg + icg) * kh + ky) * kw + kx];
            for (std::size_t y = 0; y < oh; ++y) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride.h + ky) - ph;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const float* row = src + static_cast<std::size_t>(iy) * w;
              float* orow = plane + y * ow;
              for (std::size_t x = 0; x < ow; ++x) {
                const std::ptrdiff_t ix =
                    static_cast<std::ptrdiff_t>(x * stride.w + kx) - pw;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                orow[x] += row[ix] * k;
              }
            }
          }
        }
      }
      if (bias) {
        const float bv = (*bias)[oc];
        for (std::size_t i = 0; i < oh * ow; ++i) plane[i] += bv;
      }
    }
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias) {
  const std::string op = "linear";
  require_rank(op, "x", x, 2);
  require_rank(op, "weight", weight, 2);
  const std::size_t n = x.extent(0), din = x.extent(1);
  const std::size_t dout = weight.extent(0);
  if (weight.extent(1) != din) {
    dim_error(op, "inner dimension mismatch: x axis 1 = " +
                      std::to_string(din) + ", weight axis 1 = " +
                      std::to_string(weight.extent(1)));
  }
  if (bias && (bias->rank() != 1 || bias->extent(0) != dout)) {
    dim_error(op, "bias must be a vector of length " + std::to_string(dout) +
                      ", got " + shape_to_string(bias->shape()));
  }
  Tensor out({n, dout});
  const float* xs = x.data().data();
  const float* ws = weight.data().data();
  float* ys = out.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dout; ++c) {
      float acc = dot(xs + r * din, ws + c * din, din);
      if (bias) acc += (*bias)[c];
      ys[r * dout + c] = acc;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, std::size_t normalized_extent,
                  const Tensor& gamma, const Tensor& beta, float epsilon) {
  const std::string op = "layer_norm";
  const std::size_t d = normalized_extent;
  if (x.shape().back() != d) {
    dim_error(op, "last axis extent " + std::to_string(x.shape().back()) +
                      " != normalized extent " + std::to_string(d));
  }
  if (gamma.numel() != d || beta.numel() != d) {
    dim_error(op, "gamma/beta length must equal normalized extent " +
                      std::to_string(d));
  }
  if (!(epsilon > 0.0f)) dim_error(op, "epsilon must be positive");

  Tensor out(x.shape());
  const std::size_t rows = x.numel() / d;
  const float* src = x.data().data();
  float* dst = out.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = src + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double diff = row[i] - mean;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + static_cast<double>(epsilon));
    for (std::size_t i = 0; i < d; ++i) {
      dst[r * d + i] = static_cast<float>((row[i] - mean) * inv * gamma[i] +
                                          static_cast<double>(beta[i]));
    }
  }
  return out;
}

float gelu(float x) noexcept {
  const double v = x;
  return static_cast<float>(0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))));
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

float sigmoid(float x) noexcept {
  return static_cast<float>(sigmoid(static_cast<double>(x)));
}

void activation_inplace(Tensor& x, Activation kind) {
  auto data = x.data();
  switch (kind) {
    case Activation::kRelu:
      for (auto& v : data) v = v > 0.0f ? v : 0.0f;
      break;
    case Activation::kGelu:
      for (auto& v : data) v = gelu(v);
      break;
    case Activation::kSigmoid:
      for (auto& v : data) v = sigmoid(v);
      break;
  }
}

Tensor activation(const Tensor& x, Activation kind) {
  Tensor out = x;
  activation_inplace(out, kind);
  return out;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    dim_error("softmax", "axis " + std::to_string(axis) +
                             " out of range for shape " +
                             shape_to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
  const std::size_t len = x.extent(axis);

  Tensor out(x.shape());
  const float* src = x.data().data();
  float* dst = out.data().data();
  std::vector<double> ex(len);
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t b = 0; b < inner; ++b) {
      const std::size_t base = a * len * inner + b;
      float mx = src[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, src[base + i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        ex[i] = std::exp(static_cast<double>(src[base + i * inner]) - mx);
        sum += ex[i];
      }
      for (std::size_t i = 0; i < len; ++i) {
        dst[base + i * inner] = static_cast<float>(ex[i] / sum);
      }
    }
  }
  return out;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k,
                                    const Tensor& v,
                                    const std::optional<Tensor>& bias) {
  const std::string op = "attention";
  require_rank(op, "q", q, 3);
  require_rank(op, "k", k, 3);
  require_rank(op, "v", v, 3);
  const std::size_t heads = q.extent(0), len = q.extent(1), dk = q.extent(2);
  const std::size_t dv = v.extent(2);
  if (k.extent(0) != heads || v.extent(0) != heads) {
    dim_error(op, "head axis (0) mismatch between q, k, v");
  }
  if (k.extent(1) != len || v.extent(1) != len) {
    dim_error(op, "length axis (1) mismatch between q, k, v");
  }
  if (k.extent(2) != dk) dim_error(op, "key depth axis (2) mismatch between q and k");
  if (bias && bias->shape() != Shape{heads, len, len}) {
    dim_error(op, "bias must be " + shape_to_string({heads, len, len}) +
                      ", got " + shape_to_string(bias->shape()));
  }

  const float scale = 1.0f / std::sqrt(static_cast<float>(dk));
  Tensor out({heads, len, dv});
  std::vector<float> logits(len);
  std::vector<double> weights(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* qh = q.data().data() + h * len * dk;
    const float* kh = k.data().data() + h * len * dk;
    const float* vh = v.data().data() + h * len * dv;
    float* oh = out.data().data() + h * len * dv;
    for (std::size_t i = 0; i < len; ++i) {
      float mx = 0.0f;
      for (std::size_t j = 0; j < len; ++j) {
        float s = dot(qh + i * dk, kh + j * dk, dk) * scale;
        if (bias) s += (*bias)[(h * len + i) * len + j];
        logits[j] = s;
        mx = j == 0 ? s : std::max(mx, s);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        weights[j] = std::exp(static_cast<double>(logits[j]) - mx);
        sum += weights[j];
      }
      float* orow = oh + i * dv;
      for (std::size_t j = 0; j < len; ++j) {
        const float p = static_cast<float>(weights[j] / sum);
        const float* vrow = vh + j * dv;
        for (std::size_t c = 0; c < dv; ++c) orow[c] += p * vrow[c];
      }
    }
  }
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dim_error("add", "shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  add_inplace(out, b);
  return out;
}

Tensor transpose2d(const Tensor& x) {
  require_rank("transpose2d", "x", x, 2);
  const std::size_t r = x.extent(0), c = x.extent(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  }
  return out;
}

}  // namespace kairos::ops
