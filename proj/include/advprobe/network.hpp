#ifndef ADVPROBE_NETWORK_HPP
#define ADVPROBE_NETWORK_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/ops.hpp"
#include "advprobe/rng.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

namespace layer {
struct Conv {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};
struct Relu {};
struct MaxPool {
  std::size_t window = 2;
};
/// Inverted dropout. Identity outside training.
struct Dropout {
  double rate = 0.0;
};
/// Fully connected layer over the flattened input.
struct Dense {
  std::size_t units = 0;
};
}  // namespace layer

using LayerSpec = std::variant<layer::Conv, layer::Relu, layer::MaxPool, layer::Dropout, layer::Dense>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

/// Architecture of a feed-forward classifier over side x side x channels images.
/// The final layer must be Dense with `num_classes` units; softmax is implicit.
struct ArchDescriptor {
  std::string name;
  std::size_t input_side = 0;
  std::size_t channels = 3;
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;

  Shape input_shape() const { return {input_side, input_side, channels}; }
};

/// Learnable parameters bound to an architecture by `arch_tag`. Conv layers
/// contribute (kernel [k,k,Cin,F], bias [F]); dense layers (weight [n,m], bias [m]).
struct ModelWeights {
  std::string arch_tag;
  std::vector<Tensor> layers;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

/// Dropout is active only in `train`.
enum class Mode { inference, gradient, train };

/// Output shape of every layer, validating the descriptor on the way.
inline std::vector<Shape> layer_output_shapes(const ArchDescriptor& arch) {
  if (arch.input_side == 0 || arch.channels == 0) throw DimensionError("arch: empty input shape");
  if (arch.num_classes < 2) throw DomainError("arch: need at least 2 classes");
  if (arch.layers.empty() || !std::holds_alternative<layer::Dense>(arch.layers.back())) {
    throw ConsistencyError("arch '" + arch.name + "': last layer must be dense");
  }
  std::vector<Shape> shapes;
  Shape cur = arch.input_shape();
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    const std::string where = "arch '" + arch.name + "' layer " + std::to_string(li) + ": ";
    std::visit(overloaded{
                   [&](const layer::Conv& c) {
                     if (cur.size() != 3) throw DimensionError(where + "conv after dense");
                     if (c.filters == 0 || c.kernel == 0 || c.stride == 0) {
                       throw DomainError(where + "conv parameters must be positive");
                     }
                     if (c.kernel > cur[0] || c.kernel > cur[1]) {
                       throw DimensionError(where + "kernel " + std::to_string(c.kernel) +
                                            " larger than input " + shape_string(cur));
                     }
                     cur = {conv_output_extent(cur[0], c.kernel, c.stride),
                            conv_output_extent(cur[1], c.kernel, c.stride), c.filters};
                   },
                   [&](const layer::Relu&) {},
                   [&](const layer::MaxPool& p) {
                     if (cur.size() != 3) throw DimensionError(where + "pool after dense");
                     if (p.window == 0 || cur[0] % p.window != 0 || cur[1] % p.window != 0) {
                       throw DimensionError(where + "pool window " + std::to_string(p.window) +
                                            " does not divide " + shape_string(cur));
                     }
                     cur = {cur[0] / p.window, cur[1] / p.window, cur[2]};
                   },
                   [&](const layer::Dropout& d) {
                     if (!(d.rate >= 0.0 && d.rate < 1.0)) throw DomainError(where + "dropout rate outside [0,1)");
                   },
                   [&](const layer::Dense& d) {
                     if (d.units == 0) throw DomainError(where + "dense units must be positive");
                     cur = {d.units};
                   },
               },
               arch.layers[li]);
    shapes.push_back(cur);
  }
  if (cur != Shape{arch.num_classes}) {
    throw ConsistencyError("arch '" + arch.name + "': output " + shape_string(cur) + " != num_classes " +
                           std::to_string(arch.num_classes));
  }
  return shapes;
}

/// Parameter tensor shapes in storage order.
inline std::vector<Shape> parameter_shapes(const ArchDescriptor& arch) {
  const auto outs = layer_output_shapes(arch);
  std::vector<Shape> params;
  Shape in = arch.input_shape();
  for (std::size_t li = 0; li < arch.layers.size(); ++li) {
    if (const auto* c = std::get_if<layer::Conv>(&arch.layers[li])) {
      params.push_back({c->kernel, c->kernel, in[2], c->filters});
      params.push_back({c->filters});
    } else if (const auto* d = std::get_if<layer::Dense>(&arch.layers[li])) {
      params.push_back({shape_size(in), d->units});
      params.push_back({d->units});
    }
    in = outs[li];
  }
  return params;
}

inline void check_consistency(const ArchDescriptor& arch, const ModelWeights& weights) {
  if (weights.arch_tag != arch.name) {
    throw ConsistencyError("weights tagged '" + weights.arch_tag + "' do not belong to arch '" + arch.name + "'");
  }
  const auto expected = parameter_shapes(arch);
  if (expected.size() != weights.layers.size()) {
    throw ConsistencyError("arch '" + arch.name + "' expects " + std::to_string(expected.size()) +
                           " parameter tensors, weights have " + std::to_string(weights.layers.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (weights.layers[i].shape() != expected[i]) {
      throw ConsistencyError("parameter " + std::to_string(i) + ": expected " + shape_string(expected[i]) +
                             ", got " + shape_string(weights.layers[i].shape()));
    }
  }
}

/// He-uniform kernels, zero biases.
inline ModelWeights init_weights(const ArchDescriptor& arch, std::uint64_t seed) {
  Rng rng(seed);
  ModelWeights w;
  w.arch_tag = arch.name;
  for (const Shape& s : parameter_shapes(arch)) {
    Tensor t(s);
    if (s.size() > 1) {
      const std::size_t fan_in = shape_size(s) / s.back();
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
    }
    w.layers.push_back(std::move(t));
  }
  return w;
}

/// Activations retained by a forward pass for the reverse pass.
struct ForwardTrace {
  std::vector<Tensor> inputs;                      // input of each layer
  std::vector<std::vector<std::size_t>> argmaxes;  // per pool layer, by layer index
  std::vector<std::vector<float>> masks;           // per dropout layer, by layer index
  Tensor logits;
};

/// Gradients of the loss with respect to the parameters, same layout as ModelWeights::layers.
using ParamGradients = std::vector<Tensor>;

/// A descriptor together with matching weights. Immutable after construction,
/// so forward and gradient calls are safe from many threads.
class Network {
 public:
  Network(ArchDescriptor arch, ModelWeights weights) : arch_(std::move(arch)), weights_(std::move(weights)) {
    check_consistency(arch_, weights_);
  }

  const ArchDescriptor& arch() const noexcept { return arch_; }
  const ModelWeights& weights() const noexcept { return weights_; }
  std::size_t num_classes() const noexcept { return arch_.num_classes; }
  Shape input_shape() const { return arch_.input_shape(); }

  /// Runs every layer. `dropout_rng` is required in Mode::train.
  ForwardTrace forward(const Tensor& x, Mode mode, Rng* dropout_rng = nullptr) const {
    check_input(x);
    ForwardTrace trace;
    trace.argmaxes.resize(arch_.layers.size());
    trace.masks.resize(arch_.layers.size());
    trace.inputs.reserve(arch_.layers.size());
    Tensor cur = x;
    std::size_t p = 0;
    for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
      trace.inputs.push_back(cur);
      cur = std::visit(overloaded{
                           [&](const layer::Conv& c) {
                             Tensor out = conv2d_forward(cur, weights_.layers[p], weights_.layers[p + 1], c.stride);
                             p += 2;
                             return out;
                           },
                           [&](const layer::Relu&) { return relu(cur); },
                           [&](const layer::MaxPool& mp) { return maxpool2d(cur, mp.window, &trace.argmaxes[li]); },
                           [&](const layer::Dropout& d) {
                             if (mode != Mode::train || d.rate == 0.0) return cur;
                             if (!dropout_rng) throw DomainError("forward: training mode needs a dropout rng");
                             const float keep_scale = static_cast<float>(1.0 / (1.0 - d.rate));
                             auto& mask = trace.masks[li];
                             mask.resize(cur.size());
                             Tensor out = cur;
                             for (std::size_t i = 0; i < out.size(); ++i) {
                               mask[i] = dropout_rng->uniform() < d.rate ? 0.0f : keep_scale;
                               out[i] *= mask[i];
                             }
                             return out;
                           },
                           [&](const layer::Dense&) {
                             Tensor out = dense_forward(cur, weights_.layers[p], weights_.layers[p + 1]);
                             p += 2;
                             return out;
                           },
                       },
                       arch_.layers[li]);
    }
    trace.logits = std::move(cur);
    return trace;
  }

  Tensor logits(const Tensor& x) const {
    check_input(x);
    Tensor cur = x;
    std::size_t p = 0;
    for (const auto& spec : arch_.layers) {
      if (const auto* c = std::get_if<layer::Conv>(&spec)) {
        cur = conv2d_forward(cur, weights_.layers[p], weights_.layers[p + 1], c->stride);
        p += 2;
      } else if (std::holds_alternative<layer::Relu>(spec)) {
        for (float& v : cur.values()) v = std::max(v, 0.0f);
      } else if (const auto* mp = std::get_if<layer::MaxPool>(&spec)) {
        cur = maxpool2d(cur, mp->window);
      } else if (std::holds_alternative<layer::Dense>(spec)) {
        cur = dense_forward(cur, weights_.layers[p], weights_.layers[p + 1]);
        p += 2;
      }
    }
    return cur;
  }

  ProbVector probabilities(const Tensor& x) const { return softmax(logits(x).values()); }

  ClassIndex predict(const Tensor& x) const { return argmax(probabilities(x)); }

  LossValue loss(const Tensor& x, ClassIndex y) const { return cross_entropy(probabilities(x), y); }

  /// Reverse pass from dL/d(logits). Returns dL/dx; fills `param_grads` when non-null.
  Tensor backward(const ForwardTrace& trace, const Tensor& grad_logits, ParamGradients* param_grads) const {
    const bool want_params = param_grads != nullptr;
    if (want_params) param_grads->assign(weights_.layers.size(), Tensor{});
    Tensor grad = grad_logits;
    std::size_t p = weights_.layers.size();
    for (std::size_t li = arch_.layers.size(); li-- > 0;) {
      const Tensor& in = trace.inputs[li];
      std::visit(overloaded{
                     [&](const layer::Conv& c) {
                       p -= 2;
                       auto g = conv2d_backward(in, weights_.layers[p], grad, c.stride, want_params);
                       if (want_params) {
                         (*param_grads)[p] = std::move(g.kernel);
                         (*param_grads)[p + 1] = std::move(g.bias);
                       }
                       grad = std::move(g.input);
                     },
                     [&](const layer::Relu&) { grad = relu_backward(in, grad); },
                     [&](const layer::MaxPool&) { grad = maxpool2d_backward(in.shape(), trace.argmaxes[li], grad); },
                     [&](const layer::Dropout&) {
                       const auto& mask = trace.masks[li];
                       if (!mask.empty()) {
                         for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
                       }
                     },
                     [&](const layer::Dense&) {
                       p -= 2;
                       auto g = dense_backward(in, weights_.layers[p], grad, want_params);
                       if (want_params) {
                         (*param_grads)[p] = std::move(g.weight);
                         (*param_grads)[p + 1] = std::move(g.bias);
                       }
                       grad = std::move(g.input).reshaped(in.shape());
                     },
                 },
                 arch_.layers[li]);
    }
    return grad;
  }

  /// dJ/dx of scale * cross_entropy(softmax(f(x)), y), dropout disabled.
  Tensor input_gradient(const Tensor& x, ClassIndex y, double scale = 1.0) const {
    if (y >= arch_.num_classes) {
      throw IndexError("input_gradient: label " + std::to_string(y) + " out of range");
    }
    const ForwardTrace trace = forward(x, Mode::gradient);
    return backward(trace, logit_gradient(trace.logits, y, scale), nullptr);
  }

  /// dJ/d(logits) = scale * (softmax(logits) - onehot(y)).
  static Tensor logit_gradient(const Tensor& logits, ClassIndex y, double scale = 1.0) {
    const ProbVector probs = softmax(logits.values());
    Tensor g(logits.shape());
    for (std::size_t k = 0; k < probs.size(); ++k) {
      g[k] = static_cast<float>(scale * (probs[k] - (k == y ? 1.0 : 0.0)));
    }
    return g;
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.shape() != arch_.input_shape()) {
      throw DimensionError("network '" + arch_.name + "': input shape " + shape_string(x.shape()) +
                           " != expected " + shape_string(arch_.input_shape()));
    }
  }

  ArchDescriptor arch_;
  ModelWeights weights_;
};

/// Exact reverse-mode gradient of cross_entropy(softmax(forward(x)), y) with respect to x.
inline Tensor backward_input_gradient(const ArchDescriptor& arch, const ModelWeights& weights, const Tensor& x,
                                      ClassIndex y) {
  return Network(arch, weights).input_gradient(x, y);
}

}  // namespace advprobe

#endif  // ADVPROBE_NETWORK_HPP
