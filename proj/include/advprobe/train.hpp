#ifndef ADVPROBE_TRAIN_HPP
#define ADVPROBE_TRAIN_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

#include "advprobe/dataset.hpp"
#include "advprobe/error.hpp"
#include "advprobe/network.hpp"
#include "advprobe/rng.hpp"

namespace advprobe {

struct TrainOptions {
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ModelWeights weights;
  std::vector<double> accuracy;  // inference-mode training accuracy after each epoch
  std::vector<double> mean_loss;  // training-mode loss averaged over each epoch
};

inline double accuracy(const Network& net, const LabeledSet& set) {
  if (set.empty()) throw DomainError("accuracy: empty set");
  std::size_t hits = 0;
  for (const auto& s : set.samples) hits += net.predict(s.image) == s.label ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(set.size());
}

/// Mini-batch SGD with constant learning rate on mean cross-entropy. Sample
/// order and dropout masks come from `opts.seed`, so equal inputs give
/// bit-identical weights.
inline TrainResult sgd_train(const ArchDescriptor& arch, ModelWeights weights, const LabeledSet& data,
                             const TrainOptions& opts) {
  if (data.empty()) throw TrainingError("empty dataset", 0);
  if (!(opts.learning_rate >= 0.0) || !std::isfinite(opts.learning_rate)) {
    throw DomainError("sgd_train: learning rate must be finite and non-negative");
  }
  if (opts.batch_size == 0) throw DomainError("sgd_train: batch size must be positive");
  for (const auto& s : data.samples) {
    if (s.label >= arch.num_classes) {
      throw TrainingError("label " + std::to_string(s.label) + " >= num_classes " + std::to_string(arch.num_classes), 0);
    }
  }
  check_consistency(arch, weights);

  Rng rng(opts.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t stop = std::min(order.size(), start + opts.batch_size);
      const Network net(arch, weights);
      std::vector<std::vector<double>> acc;
      for (std::size_t b = start; b < stop; ++b) {
        const auto& sample = data.samples[order[b]];
        const ForwardTrace trace = net.forward(sample.image, Mode::train, &rng);
        double loss = 0.0;
        try {
          loss = cross_entropy(softmax(trace.logits.values()), sample.label).value;
        } catch (const NumericError&) {
          throw TrainingError("non-finite loss", epoch);
        }
        if (!std::isfinite(loss)) throw TrainingError("non-finite loss", epoch);
        loss_sum += loss;
        ParamGradients grads;
        net.backward(trace, Network::logit_gradient(trace.logits, sample.label), &grads);
        if (acc.empty()) {
          acc.resize(grads.size());
          for (std::size_t i = 0; i < grads.size(); ++i) acc[i].assign(grads[i].size(), 0.0);
        }
        for (std::size_t i = 0; i < grads.size(); ++i) {
          for (std::size_t k = 0; k < grads[i].size(); ++k) acc[i][k] += grads[i][k];
        }
      }
      const double step = opts.learning_rate / static_cast<double>(stop - start);
      for (std::size_t i = 0; i < weights.layers.size(); ++i) {
        auto& t = weights.layers[i];
        for (std::size_t k = 0; k < t.size(); ++k) {
          t[k] = static_cast<float>(static_cast<double>(t[k]) - step * acc[i][k]);
        }
        if (!t.all_finite()) throw TrainingError("non-finite weights", epoch);
      }
    }
    result.mean_loss.push_back(loss_sum / static_cast<double>(data.size()));
    result.accuracy.push_back(accuracy(Network(arch, weights), data));
  }
  result.weights = std::move(weights);
  return result;
}

}  // namespace advprobe

#endif  // ADVPROBE_TRAIN_HPP
