#ifndef ADVPROBE_OPS_HPP
#define ADVPROBE_OPS_HPP

// Forward and backward kernels for the fixed layer set. Storage is float,
// every reduction accumulates in double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

inline Tensor from_double(Shape shape, const std::vector<double>& acc) {
  std::vector<float> out(acc.size());
  std::transform(acc.begin(), acc.end(), out.begin(), [](double v) { return static_cast<float>(v); });
  return Tensor(std::move(shape), std::move(out));
}

}  // namespace detail

/// Output extent of a valid-padding window sweep.
inline std::size_t conv_output_extent(std::size_t input, std::size_t kernel, std::size_t stride) {
  return (input - kernel) / stride + 1;
}

/// Valid-padding 2-D convolution. input [H,W,Cin], kernel [kh,kw,Cin,Cout], bias [Cout].
inline Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                             std::size_t stride) {
  detail::require_rank(input, 3, "conv2d", "input");
  detail::require_rank(kernel, 4, "conv2d", "kernel");
  if (stride == 0) throw DomainError("conv2d: stride must be positive");
  const std::size_t H = input.dim(0), W = input.dim(1), Cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  if (kernel.dim(2) != Cin) {
    throw DimensionError("conv2d: kernel input-channel axis (" + std::to_string(kernel.dim(2)) +
                         ") != input channel axis (" + std::to_string(Cin) + ")");
  }
  if (kh > H) {
    throw DimensionError("conv2d: kernel height (" + std::to_string(kh) + ") exceeds input height (" +
                         std::to_string(H) + ")");
  }
  if (kw > W) {
    throw DimensionError("conv2d: kernel width (" + std::to_string(kw) + ") exceeds input width (" +
                         std::to_string(W) + ")");
  }
  if (bias.size() != Cout) {
    throw DimensionError("conv2d: bias length (" + std::to_string(bias.size()) +
                         ") != kernel output-channel axis (" + std::to_string(Cout) + ")");
  }
  const std::size_t Ho = conv_output_extent(H, kh, stride);
  const std::size_t Wo = conv_output_extent(W, kw, stride);
  Tensor out({Ho, Wo, Cout});
  std::vector<double> acc(Cout);
  const float* in = input.data();
  const float* k = kernel.data();
  const std::size_t row_len = kw * Cin;
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      for (std::size_t co = 0; co < Cout; ++co) acc[co] = bias[co];
      for (std::size_t i = 0; i < kh; ++i) {
        const float* src = in + ((oh * stride + i) * W + ow * stride) * Cin;
        const float* krow = k + i * row_len * Cout;
        for (std::size_t j = 0; j < row_len; ++j) {
          const double v = src[j];
          const float* kp = krow + j * Cout;
          for (std::size_t co = 0; co < Cout; ++co) acc[co] += v * static_cast<double>(kp[co]);
        }
      }
      float* dst = out.data() + (oh * Wo + ow) * Cout;
      for (std::size_t co = 0; co < Cout; ++co) dst[co] = static_cast<float>(acc[co]);
    }
  }
  return out;
}

struct ConvGradients {
  Tensor input;
  Tensor kernel;  // empty when parameter gradients were not requested
  Tensor bias;
};

/// Reverse pass of conv2d_forward given dL/d(output).
inline ConvGradients conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                                     std::size_t stride, bool want_params) {
  const std::size_t W = input.dim(1), Cin = input.dim(2);
  const std::size_t kh = kernel.dim(0), kw = kernel.dim(1), Cout = kernel.dim(3);
  const std::size_t Ho = grad_out.dim(0), Wo = grad_out.dim(1);
  if (grad_out.dim(2) != Cout) throw DimensionError("conv2d_backward: gradient channel axis mismatch");
  std::vector<double> d_in(input.size(), 0.0);
  std::vector<double> d_k(want_params ? kernel.size() : 0, 0.0);
  std::vector<double> d_b(want_params ? Cout : 0, 0.0);
  const float* in = input.data();
  const float* k = kernel.data();
  const std::size_t row_len = kw * Cin;
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      const float* g = grad_out.data() + (oh * Wo + ow) * Cout;
      if (want_params) {
        for (std::size_t co = 0; co < Cout; ++co) d_b[co] += g[co];
      }
      for (std::size_t i = 0; i < kh; ++i) {
        const std::size_t base = ((oh * stride + i) * W + ow * stride) * Cin;
        const float* krow = k + i * row_len * Cout;
        for (std::size_t j = 0; j < row_len; ++j) {
          const float* kp = krow + j * Cout;
          double s = 0.0;
          for (std::size_t co = 0; co < Cout; ++co) s += static_cast<double>(kp[co]) * g[co];
          d_in[base + j] += s;
          if (want_params) {
            const double v = in[base + j];
            double* dk = d_k.data() + (i * row_len + j) * Cout;
            for (std::size_t co = 0; co < Cout; ++co) dk[co] += v * g[co];
          }
        }
      }
    }
  }
  ConvGradients grads;
  grads.input = detail::from_double(input.shape(), d_in);
  if (want_params) {
    grads.kernel = detail::from_double(kernel.shape(), d_k);
    grads.bias = detail::from_double({Cout}, d_b);
  }
  return grads;
}

/// Non-overlapping max pool. `argmax`, when given, receives the flat input index
/// chosen for each output cell (first maximum wins).
inline Tensor maxpool2d(const Tensor& input, std::size_t window,
                        std::vector<std::size_t>* argmax_out = nullptr) {
  detail::require_rank(input, 3, "maxpool2d", "input");
  if (window == 0) throw DomainError("maxpool2d: window must be positive");
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  if (H % window != 0) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " does not divide height " +
                         std::to_string(H));
  }
  if (W % window != 0) {
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " does not divide width " +
                         std::to_string(W));
  }
  const std::size_t Ho = H / window, Wo = W / window;
  Tensor out({Ho, Wo, C});
  if (argmax_out) argmax_out->assign(out.size(), 0);
  for (std::size_t oh = 0; oh < Ho; ++oh) {
    for (std::size_t ow = 0; ow < Wo; ++ow) {
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (oh * window * W + ow * window) * C + c;
        for (std::size_t i = 0; i < window; ++i) {
          for (std::size_t j = 0; j < window; ++j) {
            const std::size_t idx = ((oh * window + i) * W + ow * window + j) * C + c;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (oh * Wo + ow) * C + c;
        out[o] = input[best];
        if (argmax_out) (*argmax_out)[o] = best;
      }
    }
  }
  return out;
}

inline Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                 const Tensor& grad_out) {
  Tensor grad(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad[argmax[o]] += grad_out[o];
  return grad;
}

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.values()) v = std::max(v, 0.0f);
  return out;
}

/// dL/dx of relu; the subgradient at 0 is taken as 0.
inline Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  Tensor grad = grad_out;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0f)) grad[i] = 0.0f;
  }
  return grad;
}

/// Affine map of the flattened input: out[j] = sum_i x[i] * weight[i, j] + bias[j].
inline Tensor dense_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  detail::require_rank(weight, 2, "dense", "weight");
  const std::size_t n = weight.dim(0), m = weight.dim(1);
  if (input.size() != n) {
    throw DimensionError("dense: input length (" + std::to_string(input.size()) +
                         ") != weight row axis (" + std::to_string(n) + ")");
  }
  if (bias.size() != m) {
    throw DimensionError("dense: bias length (" + std::to_string(bias.size()) +
                         ") != weight column axis (" + std::to_string(m) + ")");
  }
  std::vector<double> acc(m);
  for (std::size_t j = 0; j < m; ++j) acc[j] = bias[j];
  const float* w = weight.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = input[i];
    if (v == 0.0) continue;
    const float* row = w + i * m;
    for (std::size_t j = 0; j < m; ++j) acc[j] += v * static_cast<double>(row[j]);
  }
  return detail::from_double({m}, acc);
}

struct DenseGradients {
  Tensor input;
  Tensor weight;  // empty when parameter gradients were not requested
  Tensor bias;
};

inline DenseGradients dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                                     bool want_params) {
  const std::size_t n = weight.dim(0), m = weight.dim(1);
  DenseGradients grads;
  grads.input = Tensor(input.shape());
  const float* w = weight.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const float* row = w + i * m;
    for (std::size_t j = 0; j < m; ++j) s += static_cast<double>(row[j]) * grad_out[j];
    grads.input[i] = static_cast<float>(s);
  }
  if (want_params) {
    grads.weight = Tensor(weight.shape());
    for (std::size_t i = 0; i < n; ++i) {
      const double v = input[i];
      float* row = grads.weight.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) row[j] = static_cast<float>(v * grad_out[j]);
    }
    grads.bias = grad_out.reshaped({m});
  }
  return grads;
}

/// Numerically stable softmax (max subtraction, double precision).
inline ProbVector softmax(std::span<const float> logits) {
  if (logits.size() < 2) throw DomainError("softmax: need at least 2 classes");
  double peak = -std::numeric_limits<double>::infinity();
  for (float v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite logit");
    peak = std::max(peak, static_cast<double>(v));
  }
  ProbVector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - peak);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

/// Cross-entropy in nats.
struct LossValue {
  double value = 0.0;
};

/// Probabilities are floored before the log so confident models stay finite.
inline constexpr double kProbabilityFloor = 1e-12;

inline LossValue cross_entropy(std::span<const double> probs, ClassIndex label) {
  if (label >= probs.size()) {
    throw IndexError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(probs.size()) + " classes");
  }
  const double p = std::max(probs[label], kProbabilityFloor);
  return LossValue{std::max(0.0, -std::log(p))};
}

}  // namespace advprobe

#endif  // ADVPROBE_OPS_HPP
