#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <thread>
#include <type_traits>

#include "advprobe/models.hpp"
#include "support/gradcheck.hpp"
#include "support/naive.hpp"

namespace advprobe {
namespace {

using testing::random_tensor;

// The oracle surface: predict_probs plus bookkeeping, nothing that exposes
// parameters or derivatives.
template <typename T>
concept ExposesGradient = requires(T& t, const Tensor& x) { t.gradient(x, ClassIndex{0}); };
template <typename T>
concept ExposesWeights = requires(T& t) { t.weights(); };
template <typename T>
concept ExposesNetwork = requires(T& t) { t.network(); };
template <typename T>
concept ExposesModel = requires(T& t) { t.model(); };

static_assert(!ExposesGradient<BlackBoxOracle>);
static_assert(!ExposesWeights<BlackBoxOracle>);
static_assert(!ExposesNetwork<BlackBoxOracle>);
static_assert(!ExposesModel<BlackBoxOracle>);
static_assert(!std::is_copy_constructible_v<BlackBoxOracle>);
static_assert(ExposesGradient<WhiteBoxModel> && ExposesWeights<WhiteBoxModel>);

TEST(ReferenceArchs, BlackBoxHasMorePoolingAndDropout) {
  const auto white = whitebox_arch(43);
  const auto black = blackbox_arch(43);
  EXPECT_EQ(white.input_side, 150u);
  EXPECT_EQ(black.input_side, 150u);
  EXPECT_EQ(white.channels, 3u);
  constexpr std::size_t pool = 2, dropout = 3, conv = 0;
  EXPECT_GT(count_layers_of(black, pool), count_layers_of(white, pool));
  EXPECT_GT(count_layers_of(black, dropout), count_layers_of(white, dropout));
  EXPECT_EQ(count_layers_of(black, conv), 2u);
  EXPECT_EQ(count_layers_of(white, conv), 2u);
  EXPECT_NO_THROW(layer_output_shapes(white));
  EXPECT_NO_THROW(layer_output_shapes(black));
}

/// Two-class linear model on a (1,1,2) input with known weights.
ArchDescriptor two_pixel_arch() { return {"lin2", 1, 2, 2, {layer::Dense{2}}}; }
ModelWeights two_pixel_weights() {
  return {"lin2", {Tensor({2, 2}, std::vector<float>{1.5f, -0.5f, -2.0f, 1.0f}), Tensor({2}, std::vector<float>{0.1f, -0.2f})}};
}

TEST(Oracle, TwoClassLinearMatchesSigmoid) {
  auto oracle = make_oracle(Network(two_pixel_arch(), two_pixel_weights()));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const Tensor x = random_tensor({1, 1, 2}, rng, 0, 1);
    // logit difference z1 - z0 = (w01 - w00) x0 + (w11 - w10) x1 + (b1 - b0)
    const double z = (-0.5 - 1.5) * x[0] + (1.0 - (-2.0)) * x[1] + (-0.2 - 0.1);
    const double p1 = 1.0 / (1.0 + std::exp(-z));
    const ProbVector p = oracle.predict_probs(x);
    EXPECT_NEAR(p[1], p1, 1e-6);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-6);
  }
}

TEST(Oracle, CountsEveryQueryAndIsDeterministic) {
  Rng rng(2);
  const auto arch = testing::toy_cnn_arch();
  auto oracle = make_oracle(Network(arch, init_weights(arch, 3)));
  const Tensor x = random_tensor(arch.input_shape(), rng, 0, 1);
  const ProbVector a = oracle.predict_probs(x);
  const ProbVector b = oracle.predict_probs(x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(oracle.query_count(), 2u);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-6);
}

TEST(Oracle, ExactInputCacheSkipsRepeatedQueries) {
  Rng rng(3);
  const auto arch = testing::toy_cnn_arch();
  auto oracle = make_oracle(Network(arch, init_weights(arch, 3)), CachePolicy::exact_input);
  const Tensor x = random_tensor(arch.input_shape(), rng, 0, 1);
  Tensor y = x;
  y[0] = y[0] > 0.5f ? 0.0f : 1.0f;
  EXPECT_EQ(oracle.predict_probs(x), oracle.predict_probs(x));
  EXPECT_EQ(oracle.query_count(), 1u);
  oracle.predict_probs(y);
  EXPECT_EQ(oracle.query_count(), 2u);
  auto fresh = oracle.clone_fresh();
  EXPECT_EQ(fresh.query_count(), 0u);
}

TEST(Oracle, RejectsBadInputs) {
  const auto arch = testing::toy_cnn_arch();
  auto oracle = make_oracle(Network(arch, init_weights(arch, 3)));
  EXPECT_THROW(oracle.predict_probs(Tensor({8, 8, 2}, 0.5f)), DimensionError);
  Tensor x(arch.input_shape(), 0.5f);
  x[3] = 1.01f;
  EXPECT_THROW(oracle.predict_probs(x), DomainError);
  x[3] = -0.2f;
  EXPECT_THROW(oracle.predict_probs(x), DomainError);
  EXPECT_EQ(oracle.query_count(), 0u);
}

TEST(Oracle, CounterIsSafeUnderConcurrentQueries) {
  const auto arch = testing::toy_cnn_arch();
  auto oracle = make_oracle(Network(arch, init_weights(arch, 3)));
  const Tensor x(arch.input_shape(), 0.3f);
  std::vector<std::jthread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&] {
      for (int i = 0; i < 250; ++i) oracle.predict_probs(x);
    });
  }
  threads.clear();
  EXPECT_EQ(oracle.query_count(), 1000u);
}

TEST(WhiteBox, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const auto arch = testing::toy_cnn_arch();
  ModelWeights w{arch.name, {}};
  for (const auto& s : parameter_shapes(arch)) w.layers.push_back(random_tensor(s, rng, -0.5, 0.5));
  const WhiteBoxModel model(arch, w);
  const Tensor x = random_tensor(arch.input_shape(), rng, 0, 1);
  const Tensor g = white_box_gradient(model, x, 2);
  EXPECT_EQ(g.shape(), x.shape());
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  const auto report = testing::check_input_gradient(arch, w, x, 2, coords);
  EXPECT_EQ(report.failures, 0u);
  EXPECT_GE(report.checked, 100u);
}

TEST(MostConfusedClass, Examples) {
  EXPECT_EQ(most_confused_class(std::vector<double>{0.7, 0.2, 0.1}, 0), 1u);
  EXPECT_EQ(most_confused_class(std::vector<double>{0.5, 0.5}, 0), 1u);
  EXPECT_EQ(most_confused_class(std::vector<double>{0.4, 0.3, 0.3}, 0), 1u);
  EXPECT_EQ(most_confused_class(std::vector<double>{0.1, 0.2, 0.7}, 2), 1u);
  EXPECT_THROW(most_confused_class(std::vector<double>{1.0}, 0), DomainError);
}

TEST(MostConfusedClass, NeverTheTrueLabel) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> p(2 + rng.below(10));
    for (double& v : p) v = static_cast<double>(rng.below(4));  // many ties
    const ClassIndex y = rng.below(p.size());
    const ClassIndex c = most_confused_class(p, y);
    EXPECT_NE(c, y);
    for (ClassIndex k = 0; k < p.size(); ++k) {
      if (k == y) continue;
      EXPECT_TRUE(p[k] < p[c] || (p[k] == p[c] && k >= c));
    }
  }
}

}  // namespace
}  // namespace advprobe
