#ifndef ADVPROBE_MODELS_HPP
#define ADVPROBE_MODELS_HPP

#include <atomic>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/network.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

inline constexpr std::size_t kReferenceInputSide = 150;

/// Surrogate: conv(8, 8x8, stride 2) - relu - pool(2) - conv(16, 5x5) - relu - pool(2) - dense.
/// 150 -> 72 -> 36 -> 32 -> 16, so the head sees 16*16*16 features.
inline ArchDescriptor whitebox_arch(std::size_t num_classes) {
  return ArchDescriptor{"whitebox-v1",
                        kReferenceInputSide,
                        3,
                        num_classes,
                        {layer::Conv{8, 8, 2}, layer::Relu{}, layer::MaxPool{2}, layer::Conv{16, 5, 1}, layer::Relu{},
                         layer::MaxPool{2}, layer::Dense{num_classes}}};
}

/// Target: one extra pool stage in front, a pool after every conv and
/// dropout(0.25) after every pool. 150 -> 75 -> 72 -> 36 -> 32 -> 16.
inline ArchDescriptor blackbox_arch(std::size_t num_classes) {
  return ArchDescriptor{"blackbox-v1",
                        kReferenceInputSide,
                        3,
                        num_classes,
                        {layer::MaxPool{2}, layer::Dropout{0.25}, layer::Conv{8, 4, 1}, layer::Relu{},
                         layer::MaxPool{2}, layer::Dropout{0.25}, layer::Conv{16, 5, 1}, layer::Relu{},
                         layer::MaxPool{2}, layer::Dropout{0.25}, layer::Dense{num_classes}}};
}

inline std::size_t count_layers_of(const ArchDescriptor& arch, std::size_t variant_index) {
  std::size_t n = 0;
  for (const auto& l : arch.layers) n += l.index() == variant_index ? 1 : 0;
  return n;
}

/// Anything that maps an input to class probabilities.
class ProbabilityModel {
 public:
  virtual ~ProbabilityModel() = default;
  virtual Shape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual ProbVector probabilities(const Tensor& x) const = 0;
};

class NetworkProbabilities final : public ProbabilityModel {
 public:
  explicit NetworkProbabilities(Network net) : net_(std::move(net)) {}
  Shape input_shape() const override { return net_.input_shape(); }
  std::size_t num_classes() const override { return net_.num_classes(); }
  ProbVector probabilities(const Tensor& x) const override { return net_.probabilities(x); }

 private:
  Network net_;
};

enum class CachePolicy { none, exact_input };

/// Query-only view of a classifier: the attack sees probability vectors and
/// nothing else. Every uncached `predict_probs` call counts as one query.
class BlackBoxOracle {
 public:
  explicit BlackBoxOracle(std::shared_ptr<const ProbabilityModel> model, CachePolicy cache = CachePolicy::none)
      : model_(std::move(model)), cache_policy_(cache) {
    if (!model_) throw ConsistencyError("oracle: null model");
  }

  BlackBoxOracle(const BlackBoxOracle&) = delete;
  BlackBoxOracle& operator=(const BlackBoxOracle&) = delete;

  /// New oracle over the same model with a zeroed counter and empty cache.
  BlackBoxOracle clone_fresh() const { return BlackBoxOracle(model_, cache_policy_); }

  ProbVector predict_probs(const ImageTensor& x) {
    if (x.shape() != model_->input_shape()) {
      throw DimensionError("predict_probs: input shape " + shape_string(x.shape()) + " != expected " +
                           shape_string(model_->input_shape()));
    }
    for (float v : x.values()) {
      if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("predict_probs: pixel outside [0,1]");
    }
    if (cache_policy_ == CachePolicy::exact_input) {
      const auto key = fingerprint(x);
      std::lock_guard lock(cache_mutex_);
      auto [lo, hi] = cache_.equal_range(key);
      for (auto it = lo; it != hi; ++it) {
        if (it->second.first == x) return it->second.second;
      }
    }
    ProbVector probs = model_->probabilities(x);
    queries_.fetch_add(1, std::memory_order_relaxed);
    if (cache_policy_ == CachePolicy::exact_input) {
      std::lock_guard lock(cache_mutex_);
      cache_.emplace(fingerprint(x), std::make_pair(x, probs));
    }
    return probs;
  }

  std::uint64_t query_count() const noexcept { return queries_.load(std::memory_order_relaxed); }
  std::size_t num_classes() const { return model_->num_classes(); }
  Shape input_shape() const { return model_->input_shape(); }
  CachePolicy cache_policy() const noexcept { return cache_policy_; }

 private:
  static std::uint64_t fingerprint(const Tensor& x) {
    std::uint64_t h = 1469598103934665603ull;
    for (float v : x.values()) {
      h ^= std::bit_cast<std::uint32_t>(v);
      h *= 1099511628211ull;
    }
    return h;
  }

  std::shared_ptr<const ProbabilityModel> model_;
  CachePolicy cache_policy_;
  std::atomic<std::uint64_t> queries_{0};
  std::mutex cache_mutex_;
  std::unordered_multimap<std::uint64_t, std::pair<Tensor, ProbVector>> cache_;
};

/// Oracle over a trained network.
inline BlackBoxOracle make_oracle(Network net, CachePolicy cache = CachePolicy::none) {
  return BlackBoxOracle(std::make_shared<NetworkProbabilities>(std::move(net)), cache);
}

/// Fully transparent model: probabilities, loss and input gradients.
class WhiteBoxModel {
 public:
  explicit WhiteBoxModel(Network net) : net_(std::move(net)) {}
  WhiteBoxModel(ArchDescriptor arch, ModelWeights weights) : net_(std::move(arch), std::move(weights)) {}

  const ArchDescriptor& descriptor() const noexcept { return net_.arch(); }
  const ModelWeights& weights() const noexcept { return net_.weights(); }
  const Network& network() const noexcept { return net_; }
  std::size_t num_classes() const noexcept { return net_.num_classes(); }
  Shape input_shape() const { return net_.input_shape(); }

  ProbVector predict_probs(const ImageTensor& x) const { return net_.probabilities(x); }
  LossValue loss(const ImageTensor& x, ClassIndex y) const { return net_.loss(x, y); }
  Tensor gradient(const ImageTensor& x, ClassIndex y) const { return net_.input_gradient(x, y); }

 private:
  Network net_;
};

inline Tensor white_box_gradient(const WhiteBoxModel& model, const ImageTensor& x, ClassIndex y) {
  return model.gradient(x, y);
}

/// Highest-probability class other than `true_label`; ties go to the lowest index.
inline ClassIndex most_confused_class(std::span<const double> probs, ClassIndex true_label) {
  if (probs.size() < 2) throw DomainError("most_confused_class: need at least 2 classes");
  if (true_label >= probs.size()) throw IndexError("most_confused_class: label out of range");
  ClassIndex best = true_label == 0 ? 1 : 0;
  for (ClassIndex k = best + 1; k < probs.size(); ++k) {
    if (k != true_label && probs[k] > probs[best]) best = k;
  }
  return best;
}

}  // namespace advprobe

#endif  // ADVPROBE_MODELS_HPP
