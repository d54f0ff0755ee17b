#include <gtest/gtest.h>

#include <cmath>

#include "derain/nn/layers.hpp"
#include "derain/nn/optim.hpp"
#include "derain/nn/parallel.hpp"
#include "oracles.hpp"

using namespace derain::nn;
using T64 = Tensor<double>;

namespace {

T64 random_tensor(Shape s, std::uint64_t seed, bool grad = true, double lo = -1.0, double hi = 1.0) {
  derain::Rng rng(seed);
  std::vector<double> v(s.size());
  for (double& x : v) x = derain::uniform(rng, lo, hi);
  return T64::from(s, std::move(v), grad);
}

std::vector<double> random_coeffs(std::size_t n, std::uint64_t seed) {
  derain::Rng rng(seed);
  std::vector<double> c(n);
  for (double& x : c) x = derain::uniform(rng, -1.0, 1.0);
  return c;
}

/// Checks d(sum coeffs * f(x)) against central differences for x and params.
template <class F>
oracle::GradCheck check_layer(F&& f, const T64& x, ParamList<double> params, std::uint64_t seed) {
  params.emplace_back("x", x);
  const auto coeffs = random_coeffs(f(x).size(), seed);
  const auto r = oracle::check_gradients([&] { return weighted_sum(f(x), coeffs); }, params);
  // One near-zero pre-activation reaches every weight feeding it, so a
  // single kink can take out a whole filter bank; most entries must remain.
  EXPECT_LE(r.skipped * 4, r.checked) << "too many entries near a kink";
  return r;
}

template <class M>
ParamList<double> collected(const M& m) {
  ParamList<double> ps;
  m.collect(ps, "m");
  return ps;
}

bool all_finite(const T64& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

// --- convolution ----------------------------------------------------------

TEST(Conv, IdentityKernel) {
  Conv2d<double> conv(3, 3, 3);
  for (int c = 0; c < 3; ++c) conv.weight.data()[(c * 3 + c) * 9 + 4] = 1.0;
  const T64 x = random_tensor({2, 3, 5, 6}, 1, false);
  const T64 y = conv(x);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv, OnesKernelZeroPadding) {
  Conv2d<double> conv(1, 1, 3);
  for (double& w : conv.weight.data()) w = 1.0;
  const T64 y = conv(T64::from({1, 1, 5, 5}, std::vector<double>(25, 1.0)));
  auto at = [&](int r, int c) { return y.data()[r * 5 + c]; };
  EXPECT_EQ(at(2, 2), 9.0);
  EXPECT_EQ(at(1, 3), 9.0);
  EXPECT_EQ(at(0, 0), 4.0);
  EXPECT_EQ(at(4, 4), 4.0);
  EXPECT_EQ(at(0, 2), 6.0);
}

TEST(Conv, OneByOneIsChannelMix) {
  Conv2d<double> conv(2, 1, 1);
  conv.weight.data()[0] = 2.0;
  conv.weight.data()[1] = -1.0;
  conv.bias.data()[0] = 0.5;
  const T64 x = random_tensor({1, 2, 3, 4}, 2, false);
  const T64 y = conv(x);
  for (std::size_t p = 0; p < 12; ++p) EXPECT_NEAR(y.data()[p], 2 * x.data()[p] - x.data()[12 + p] + 0.5, 1e-15);
}

TEST(Conv, MatchesDirectLoop) {
  Conv2d<double> conv(3, 4, 3);
  derain::Rng rng(3);
  conv.init(rng);
  for (double& b : conv.bias.data()) b = derain::uniform(rng, -1, 1);
  const T64 x = random_tensor({2, 3, 6, 5}, 4, false);
  const T64 y = conv(x);
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 4; ++o)
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 5; ++c) {
          double s = conv.bias.data()[o];
          for (int i = 0; i < 3; ++i)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int rr = r + dy, cc = c + dx;
                if (rr < 0 || rr >= 6 || cc < 0 || cc >= 5) continue;
                s += conv.weight.data()[((o * 3 + i) * 3 + dy + 1) * 3 + dx + 1] *
                     x.data()[((n * 3 + i) * 6 + rr) * 5 + cc];
              }
          EXPECT_NEAR(y.data()[((n * 4 + o) * 6 + r) * 5 + c], s, 1e-12);
        }
}

TEST(Conv, ChannelMismatch) {
  Conv2d<double> conv(3, 2, 3);
  EXPECT_THROW(conv(T64::zeros({1, 2, 4, 4})), std::invalid_argument);
  EXPECT_THROW(Conv2d<double>(3, 2, 5), std::invalid_argument);
}

TEST(Conv, IsLinearInInput) {
  Conv2d<double> conv(2, 2, 3);
  derain::Rng rng(5);
  conv.init(rng);
  const T64 a = random_tensor({1, 2, 4, 4}, 6, false), b = random_tensor({1, 2, 4, 4}, 7, false);
  const T64 sum = add(a, b);
  const T64 ya = conv(a), yb = conv(b), ys = conv(sum);
  // bias is zero after init, so conv is linear
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(ys.data()[i], ya.data()[i] + yb.data()[i], 1e-12);
}

class GradSeeds : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GradSeeds, Conv3) {
  const auto s = GetParam();
  Conv2d<double> conv(3, 4, 3);
  derain::Rng rng(s);
  conv.init(rng);
  for (double& b : conv.bias.data()) b = derain::uniform(rng, -1, 1);
  const auto r = check_layer(conv, random_tensor({2, 3, 5, 5}, s + 10), collected(conv), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 0u);
}

TEST_P(GradSeeds, Conv1) {
  const auto s = GetParam();
  Conv2d<double> conv(4, 3, 1);
  derain::Rng rng(s);
  conv.init(rng);
  const auto r = check_layer(conv, random_tensor({2, 4, 4, 3}, s + 10), collected(conv), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, Relu) {
  const auto s = GetParam();
  // keep inputs away from the kink
  T64 x = random_tensor({1, 2, 4, 4}, s);
  for (double& v : x.data()) v += v > 0 ? 0.1 : -0.1;
  const auto r = check_layer([](const T64& t) { return relu(t); }, x, {}, s + 1);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, Sigmoid) {
  const auto s = GetParam();
  const auto r = check_layer([](const T64& t) { return sigmoid(t); }, random_tensor({1, 3, 3, 3}, s, true, -4, 4),
                             {}, s + 1);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, GlobalAvgPool) {
  const auto s = GetParam();
  const auto r = check_layer([](const T64& t) { return global_avg_pool(t); }, random_tensor({2, 3, 4, 5}, s), {},
                             s + 1);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, ChannelPool) {
  const auto s = GetParam();
  const auto r = check_layer([](const T64& t) { return channel_pool(t); }, random_tensor({2, 4, 3, 3}, s), {},
                             s + 1);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, ScaleOps) {
  const auto s = GetParam();
  const T64 x = random_tensor({2, 3, 4, 4}, s);
  const T64 cs = random_tensor({2, 3, 1, 1}, s + 1), ps = random_tensor({2, 1, 4, 4}, s + 2);
  auto r = check_layer([&](const T64& t) { return scale_channels(t, cs); }, x, {{"s", cs}}, s + 3);
  EXPECT_LT(r.max_rel_error, 1e-4);
  r = check_layer([&](const T64& t) { return scale_pixels(t, ps); }, x, {{"s", ps}}, s + 4);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, AddSub) {
  const auto s = GetParam();
  const T64 b = random_tensor({1, 2, 3, 3}, s + 1);
  auto r = check_layer([&](const T64& t) { return add(t, b); }, random_tensor({1, 2, 3, 3}, s), {{"b", b}}, s + 2);
  EXPECT_LT(r.max_rel_error, 1e-4);
  r = check_layer([&](const T64& t) { return sub(t, b); }, random_tensor({1, 2, 3, 3}, s), {{"b", b}}, s + 3);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, L1AwayFromTies) {
  const auto s = GetParam();
  const T64 target = random_tensor({1, 2, 4, 4}, s + 1);
  T64 pred = random_tensor({1, 2, 4, 4}, s);
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (std::abs(pred.data()[i] - target.data()[i]) < 0.05) pred.data()[i] += 0.1;
  const auto r = oracle::check_gradients([&] { return l1_loss(pred, target); }, {{"p", pred}, {"t", target}});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, ChannelAttention) {
  const auto s = GetParam();
  ChannelAttention<double> ca(8, 4);
  derain::Rng rng(s);
  ca.init(rng);
  const auto r = check_layer(ca, random_tensor({2, 8, 4, 4}, s + 10), collected(ca), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, SpatialAttention) {
  const auto s = GetParam();
  SpatialAttention<double> sa;
  derain::Rng rng(s);
  sa.init(rng);
  const auto r = check_layer(sa, random_tensor({2, 4, 5, 5}, s + 10), collected(sa), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, Dab) {
  const auto s = GetParam();
  DualAttentionBlock<double> dab(4, 2);
  derain::Rng rng(s);
  dab.init(rng);
  const auto r = check_layer(dab, random_tensor({1, 4, 5, 5}, s + 10), collected(dab), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST_P(GradSeeds, Rrg) {
  const auto s = GetParam();
  ResidualGroup<double> rrg(4, 2);
  derain::Rng rng(s);
  rrg.init(rng);
  const auto r = check_layer(rrg, random_tensor({1, 4, 4, 4}, s + 10), collected(rrg), s + 20);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(ThreeSeeds, GradSeeds, ::testing::Values(101u, 202u, 303u));

// --- attention and residual structure --------------------------------------

TEST(ChannelAttention, ZeroWeightsHalveInput) {
  ChannelAttention<double> ca(8, 4);
  const T64 x = random_tensor({2, 8, 3, 3}, 1, false);
  const T64 y = ca(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], 0.5 * x.data()[i]);
}

TEST(ChannelAttention, NeverAmplifies) {
  ChannelAttention<double> ca(8, 2);
  derain::Rng rng(2);
  ca.init(rng);
  for (double& b : ca.expand.bias.data()) b = 5.0;
  const T64 x = random_tensor({1, 8, 4, 4}, 3, false, -10, 10);
  const T64 y = ca(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LE(std::abs(y.data()[i]), std::abs(x.data()[i]));
}

TEST(ChannelAttention, ReductionMustDivide) {
  EXPECT_THROW(ChannelAttention<double>(6, 4), std::invalid_argument);
  EXPECT_THROW((LayerSpec{LayerKind::channel_attention, 8, 8, 3}.validate()), std::invalid_argument);
  EXPECT_THROW((LayerSpec{LayerKind::conv3, 0, 8, 1}.validate()), std::invalid_argument);
  EXPECT_THROW((LayerSpec{LayerKind::dab, 8, 4, 1}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((LayerSpec{LayerKind::rrg, 8, 8, 4}.validate()));
}

TEST(SpatialAttention, ZeroWeightsHalveInput) {
  SpatialAttention<double> sa;
  const T64 x = random_tensor({1, 3, 4, 4}, 4, false);
  const T64 y = sa(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], 0.5 * x.data()[i]);
}

TEST(SpatialAttention, ZeroInputGivesZero) {
  SpatialAttention<double> sa;
  derain::Rng rng(5);
  sa.init(rng);
  const T64 y = sa(T64::zeros({1, 3, 4, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(AttentionScales, StrictlyInsideUnitInterval) {
  SpatialAttention<double> sa;
  ChannelAttention<double> ca(4, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    derain::Rng rng(seed);
    sa.init(rng);
    ca.init(rng);
    const T64 x = random_tensor({1, 4, 5, 5}, seed + 100, false, 0.5, 2.0);  // positive: ratio = scale
    for (const T64& y : {sa(x), ca(x)})
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double ratio = y.data()[i] / x.data()[i];
        EXPECT_GT(ratio, 0.0);
        EXPECT_LT(ratio, 1.0);
      }
  }
}

TEST(Dab, ZeroInitIsIdentity) {
  DualAttentionBlock<double> dab(8, 4);
  const T64 x = random_tensor({1, 8, 16, 16}, 6, false);
  const T64 y = dab(x);
  ASSERT_EQ(y.shape(), (Shape{1, 8, 16, 16}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Rrg, ZeroInitIsIdentityForSeveralShapes) {
  ResidualGroup<double> rrg(4, 2);
  for (Shape s : {Shape{1, 4, 3, 7}, Shape{2, 4, 8, 8}, Shape{1, 4, 1, 1}}) {
    const T64 x = random_tensor(s, 7, false);
    const T64 y = rrg(x);
    ASSERT_EQ(y.shape(), s);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
  }
  derain::Rng rng(8);
  rrg.init(rng);
  EXPECT_EQ(rrg(random_tensor({2, 4, 5, 9}, 9, false)).shape(), (Shape{2, 4, 5, 9}));
}

TEST(Layers, RandomWeightsStayFiniteAndDeterministic) {
  ResidualGroup<double> rrg(8, 4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    derain::Rng rng(seed);
    rrg.init(rng);
    const T64 x = random_tensor({1, 8, 8, 8}, seed + 50, false, -3, 3);
    const T64 a = rrg(x), b = rrg(x);
    EXPECT_TRUE(all_finite(a));
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]);
  }
}

TEST(Layers, ForwardIndependentOfThreadCount) {
  ResidualGroup<float> rrg(8, 4);
  derain::Rng rng(3);
  rrg.init(rng);
  std::vector<float> v(2 * 8 * 12 * 12);
  for (float& f : v) f = static_cast<float>(derain::uniform(rng, -1, 1));
  const auto x = Tensor<float>::from({2, 8, 12, 12}, v, true);
  const int keep = num_threads();
  std::vector<std::vector<float>> outs, grads;
  for (int t : {1, 3}) {
    set_num_threads(t);
    x.zero_grad();
    const auto y = rrg(x);
    weighted_sum(y, std::vector<float>(y.size(), 1.0f)).backward();
    outs.emplace_back(y.data().begin(), y.data().end());
    grads.emplace_back(x.grad().begin(), x.grad().end());
  }
  set_num_threads(keep);
  EXPECT_EQ(outs[0], outs[1]);
  EXPECT_EQ(grads[0], grads[1]);
}

// --- tensor engine ----------------------------------------------------------

TEST(Tensor, NonFiniteIsHardError) {
  const T64 x = T64::from({1, 1, 1, 2}, {1.0, std::nan("")});
  EXPECT_THROW(relu(x), std::runtime_error);
  const T64 big = T64::from({1, 1, 1, 1}, {1e308});
  EXPECT_THROW(add(big, big), std::runtime_error);
}

TEST(Tensor, SizeShapeMismatch) {
  EXPECT_THROW(T64::from({1, 1, 2, 2}, {1.0, 2.0}), std::invalid_argument);
  EXPECT_THROW(add(T64::zeros({1, 1, 2, 2}), T64::zeros({1, 1, 2, 3})), std::invalid_argument);
}

TEST(Tensor, GradientsAccumulateAcrossSharedUses) {
  const T64 x = T64::from({1, 1, 1, 1}, {2.0}, true);
  const T64 y = add(x, x);  // dy/dx = 2
  weighted_sum(add(y, x), {3.0}).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 9.0);
}

TEST(Tensor, DetachCutsTheTape) {
  const T64 x = T64::from({1, 1, 1, 1}, {2.0}, true);
  const T64 y = add(x, x).detach();
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(y.item(), 4.0);
}

// --- loss ---------------------------------------------------------------

TEST(L1Loss, ClosedForms) {
  const T64 p = random_tensor({2, 3, 4, 4}, 1, false);
  EXPECT_EQ(l1_loss(p, p).item(), 0.0);
  std::vector<double> shifted(p.data().begin(), p.data().end());
  for (double& v : shifted) v += 0.5;
  EXPECT_NEAR(l1_loss(p, T64::from(p.shape(), shifted)).item(), 0.5, 1e-12);
}

TEST(L1Loss, MatchesExplicitLoop) {
  const T64 a = random_tensor({2, 3, 5, 5}, 2, false), b = random_tensor({2, 3, 5, 5}, 3, false);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  EXPECT_NEAR(l1_loss(a, b).item(), s / a.size(), 1e-10);
}

TEST(L1Loss, ShapeMismatch) {
  EXPECT_THROW(l1_loss(T64::zeros({1, 1, 2, 2}), T64::zeros({1, 1, 2, 1})), std::invalid_argument);
}

// --- optimizer -------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  const T64 w = T64::from({1, 1, 1, 3}, {1.0, -2.0, 0.5}, true);
  w.grad();  // allocate zeros
  OptimizerState st;
  adam_step<double>({{"w", w}}, st);
  EXPECT_EQ(w.data()[0], 1.0);
  EXPECT_EQ(w.data()[1], -2.0);
  EXPECT_EQ(w.data()[2], 0.5);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  for (double g : {0.3, -7.0, 1e-3}) {
    const T64 w = T64::from({1, 1, 1, 1}, {1.0}, true);
    w.grad()[0] = g;
    OptimizerState st;
    st.lr = 0.01;
    adam_step<double>({{"w", w}}, st);
    EXPECT_NEAR(w.data()[0], 1.0 - 0.01 * g / (std::abs(g) + 1e-8), 1e-12);
  }
}

TEST(Adam, MinimizesAbsoluteValue) {
  const T64 w = T64::from({1, 1, 1, 1}, {0.0}, true);
  const T64 target = T64::from({1, 1, 1, 1}, {3.0});
  OptimizerState st;
  st.lr = 0.1;
  for (int i = 0; i < 100; ++i) {
    w.zero_grad();
    l1_loss(w, target).backward();
    adam_step<double>({{"w", w}}, st);
  }
  EXPECT_LT(std::abs(w.data()[0] - 3.0), 0.5);
  EXPECT_EQ(st.step, 100);
}

TEST(Adam, RejectsBadState) {
  const T64 w = T64::from({1, 1, 1, 1}, {0.0}, true);
  OptimizerState st;
  st.lr = 0.0;
  EXPECT_THROW(adam_step<double>({{"w", w}}, st), std::invalid_argument);
  st.lr = 0.1;
  adam_step<double>({{"w", w}}, st);
  EXPECT_THROW(adam_step<double>({{"w", w}, {"w2", w}}, st), std::invalid_argument);
}

TEST(CosineLr, ScheduleValues) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 200, 2e-4, 1e-6), 2e-4);
  EXPECT_NEAR(cosine_lr(200, 200, 2e-4, 1e-6), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(100, 200, 2e-4, 1e-6), (2e-4 + 1e-6) / 2, 1e-18);
  double prev = 1.0;
  for (long s = 0; s <= 200; s += 10) {
    const double lr = cosine_lr(s, 200, 2e-4, 1e-6);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
  EXPECT_THROW(cosine_lr(-1, 200, 2e-4, 1e-6), std::out_of_range);
  EXPECT_THROW(cosine_lr(201, 200, 2e-4, 1e-6), std::out_of_range);
}

TEST(Parallel, ParallelForVisitsEveryIndexOnce) {
  const int keep = num_threads();
  set_num_threads(4);
  std::vector<std::atomic<int>> hits(97);
  parallel_for(97, [&](int i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  set_num_threads(keep);
}
