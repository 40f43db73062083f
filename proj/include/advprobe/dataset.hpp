#ifndef ADVPROBE_DATASET_HPP
#define ADVPROBE_DATASET_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "advprobe/error.hpp"
#include "advprobe/tensor.hpp"

namespace advprobe {

struct LabeledSample {
  ImageTensor image;
  ClassIndex label = 0;
};

enum class Split { train, test };

struct LabeledSet {
  std::vector<LabeledSample> samples;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  /// Throws unless labels fit `num_classes` and pixels lie in [0, 1].
  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label >= num_classes) {
        throw IndexError("sample " + std::to_string(i) + ": label " + std::to_string(samples[i].label) +
                         " >= num_classes " + std::to_string(num_classes));
      }
      for (float v : samples[i].image.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DomainError("sample " + std::to_string(i) + ": pixel outside [0,1]");
      }
    }
  }

  /// First `n` samples.
  LabeledSet head(std::size_t n) const {
    LabeledSet out{{}, num_classes, split};
    out.samples.assign(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(std::min(n, samples.size())));
    return out;
  }
};

}  // namespace advprobe

#endif  // ADVPROBE_DATASET_HPP
