#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dst/autodiff.hpp"
#include "dst/errors.hpp"
#include "dst/gradcheck.hpp"
#include "dst/nn.hpp"

using namespace dst;
using ad::Tensor;

namespace {

Tensor randn(ad::Shape shape, std::uint64_t seed, bool grad = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST(Autodiff, SoftmaxOfZerosIsUniform) {
  auto s = ad::softmax(Tensor::zeros({1, 3}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Autodiff, IdentityMatmulIsExact) {
  auto x = randn({3, 4}, 1, false);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto y = ad::matmul(Tensor::from({3, 3}, eye), x);
  EXPECT_EQ(y.to_vector(), x.to_vector());
}

TEST(Autodiff, ShapeErrorsNameBothShapes) {
  try {
    ad::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
    FAIL();
  } catch (const ShapeError& e) {
    std::string m = e.what();
    EXPECT_NE(m.find("[2,3]"), std::string::npos) << m;
    EXPECT_NE(m.find("[4,5]"), std::string::npos) << m;
  }
  EXPECT_THROW(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({2, 4})), ShapeError);
}

TEST(Autodiff, LinearGradientIsBroadcastInput) {
  // loss = sum(W x) over a batch of one: dL/dW[i][j] = x[i].
  auto x = Tensor::from({1, 3}, {1.0, -2.0, 0.5});
  auto w = Tensor::zeros({3, 2}, true);
  ad::backward(ad::sum(ad::matmul(x, w)));
  std::vector<double> expect{1.0, 1.0, -2.0, -2.0, 0.5, 0.5};
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), expect);
}

TEST(Autodiff, DisconnectedParameterHasZeroGradient) {
  nn::ParamStore ps;
  nn::Rng rng(1);
  auto used = ps.uniform("used", {2, 2}, 2, rng);
  auto unused = ps.uniform("unused", {2, 2}, 2, rng);
  ad::backward(ad::sum(used));
  EXPECT_FALSE(unused.has_grad());
  ps.zero_grad();
  nn::AdamW opt;
  auto before = unused.to_vector();
  opt.step(ps);
  EXPECT_EQ(unused.to_vector(), before);
}

TEST(Autodiff, BackwardRejectsNonScalarAndRepeats) {
  auto w = randn({2, 2}, 2);
  EXPECT_THROW(ad::backward(ad::scale(w, 2.0)), ShapeError);
  auto loss = ad::sum(w);
  ad::backward(loss);
  EXPECT_THROW(ad::backward(loss), std::logic_error);
  // A fresh loss while the leaf still holds a gradient is also rejected.
  EXPECT_THROW(ad::backward(ad::sum(w)), std::logic_error);
  w.zero_grad();
  EXPECT_NO_THROW(ad::backward(ad::sum(w)));
}

TEST(Autodiff, NoGradModeMatchesTracked) {
  auto a = randn({4, 5}, 3), b = randn({5, 3}, 4);
  auto f = [&] { return ad::softmax(ad::tanh(ad::matmul(a, b))); };
  auto tracked = f().to_vector();
  ad::NoGradGuard guard;
  EXPECT_FALSE(ad::grad_enabled());
  EXPECT_EQ(f().to_vector(), tracked);
}

TEST(Autodiff, TwoLayerCompositeMatchesFiniteDifferences) {
  nn::ParamStore ps;
  nn::Rng rng(5);
  nn::Linear l1(ps, "l1", 4, 6, rng), l2(ps, "l2", 6, 2, rng);
  auto x = randn({5, 4}, 6, false);
  std::vector<std::size_t> y{0, 1, 1, 0, 1};
  std::vector<Tensor> wrt{l1.weight, l1.bias, l2.weight, l2.bias};
  double err = max_relative_error([&] { return ad::cross_entropy_loss(l2(ad::elu(l1(x))), y); }, wrt);
  EXPECT_LT(err, 1e-4);
}

TEST(Autodiff, GruUpdateMatchesComposedOps) {
  const std::size_t b = 3, h = 4;
  auto x = randn({b, 3 * h}, 7), u = randn({b, 3 * h}, 8), s = randn({b, h}, 9);
  auto fused = ad::gru_update(x, u, s).to_vector();
  auto r = ad::sigmoid(ad::add(ad::slice(x, 0, h), ad::slice(u, 0, h)));
  auto z = ad::sigmoid(ad::add(ad::slice(x, h, 2 * h), ad::slice(u, h, 2 * h)));
  auto n = ad::tanh(ad::add(ad::slice(x, 2 * h, 3 * h), ad::mul(r, ad::slice(u, 2 * h, 3 * h))));
  auto ref = ad::add(n, ad::mul(z, ad::sub(s, n))).to_vector();
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(fused[i], ref[i], 1e-14);
  std::vector<double> active{1.0, 0.0, 1.0};
  auto masked = ad::gru_update(x, u, s, active).to_vector();
  for (std::size_t j = 0; j < h; ++j) EXPECT_EQ(masked[h + j], s.data()[h + j]);
}

TEST(Gru, BatchMatchesSequencesRunAlone) {
  nn::ParamStore ps;
  nn::Rng rng(5);
  nn::GRU gru(ps, "gru", 3, 4, rng);
  auto table = randn({7, 3}, 6, false);
  std::vector<std::vector<std::size_t>> seqs{{0, 1}, {6, 5, 4, 3, 2}, {2}, {1, 1, 1, 1, 1}, {3, 0, 6}};
  auto batch = gru.run(table, seqs).to_vector();
  ASSERT_EQ(batch.size(), seqs.size() * 4);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto alone = gru.run(table, {seqs[i]}).to_vector();
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(batch[i * 4 + k], alone[k], 1e-14) << "sequence " << i;
  }
  EXPECT_THROW(gru.run(table, {}), ShapeError);
  EXPECT_THROW(gru.run(table, {{0}, {}}), ShapeError);
}

TEST(Autodiff, EveryPrimitiveAndLayerPassesGradientSuite) {
  for (const auto& r : run_gradient_suite()) EXPECT_TRUE(r.passed) << r.name << " rel err " << r.max_rel_error;
}

TEST(AdamW, ZeroGradientZeroDecayLeavesParamsUnchanged) {
  nn::ParamStore ps;
  auto w = ps.add("w", Tensor::from({3}, {0.5, -1.0, 2.0}));
  nn::AdamW opt({1e-3, 0.9, 0.999, 1e-8, 0.0});
  ad::backward(ad::sum(ad::scale(w, 0.0)));
  opt.step(ps);
  EXPECT_EQ(w.to_vector(), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(AdamW, QuadraticBowlConverges) {
  nn::ParamStore ps;
  auto w = ps.add("w", Tensor::from({1}, {1.0}));
  nn::AdamW opt({1e-2, 0.9, 0.999, 1e-8, 0.0});
  // Reference recurrence evaluated alongside.
  double rw = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 200; ++t) {
    ps.zero_grad();
    ad::backward(ad::sum(ad::mul(w, w)));
    opt.step(ps);
    double g = 2.0 * rw;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    rw -= 1e-2 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_LT(std::abs(w.item()), 0.05);
  EXPECT_NEAR(w.item(), rw, 1e-12);
}

TEST(AdamW, DecoupledDecayShrinksMonotonically) {
  nn::ParamStore ps;
  auto w = ps.add("w", Tensor::from({2}, {1.0, -3.0}));
  nn::AdamW opt({1e-2, 0.9, 0.999, 1e-8, 0.1});
  double prev0 = 1.0, prev1 = 3.0;
  for (int t = 0; t < 20; ++t) {
    ps.zero_grad();
    ad::backward(ad::sum(ad::scale(w, 0.0)));
    opt.step(ps);
    EXPECT_LT(std::abs(w.data()[0]), prev0);
    EXPECT_LT(std::abs(w.data()[1]), prev1);
    prev0 = std::abs(w.data()[0]);
    prev1 = std::abs(w.data()[1]);
  }
}

TEST(AdamW, NonFiniteGradientNamesParameter) {
  nn::ParamStore ps;
  auto w = ps.add("encoder.weight", Tensor::from({1}, {0.0}));
  ad::backward(ad::sum(ad::log(w)));  // d/dw log(w) at 0 is inf
  nn::AdamW opt;
  try {
    opt.step(ps);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weight"), std::string::npos);
  }
}

TEST(AdamW, DeterministicLossesAcrossRuns) {
  auto run = [] {
    nn::ParamStore ps;
    nn::Rng rng(42);
    nn::Linear lin(ps, "lin", 3, 1, rng);
    auto x = randn({8, 3}, 43, false), y = randn({8, 1}, 44, false);
    nn::AdamW opt;
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) {
      ps.zero_grad();
      auto l = ad::mse_loss(lin(x), y);
      losses.push_back(l.item());
      ad::backward(l);
      opt.step(ps);
    }
    return losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(Archive, RoundTripIsBitExact) {
  auto path = std::filesystem::temp_directory_path() / "dst_archive_test.bin";
  nn::ParamStore ps;
  nn::Rng rng(3);
  ps.uniform("a", {2, 3}, 3, rng);
  ps.uniform("b.c", {4}, 4, rng);
  nn::save_params(path, ps);
  nn::ParamStore other;
  other.constant("a", {2, 3}, 0.0);
  other.constant("b.c", {4}, 0.0);
  nn::load_params(path, other);
  EXPECT_EQ(other.get("a").to_vector(), ps.get("a").to_vector());
  EXPECT_EQ(other.get("b.c").to_vector(), ps.get("b.c").to_vector());
  std::filesystem::remove(path);
}

TEST(Init, UniformWithinFanInBound) {
  nn::ParamStore ps;
  nn::Rng rng(9);
  auto w = ps.uniform("w", {16, 8}, 16, rng);
  for (double v : w.data()) EXPECT_LE(std::abs(v), 0.25);
  nn::Linear lin(ps, "lin", 4, 3, rng);
  for (double v : lin.bias.data()) EXPECT_EQ(v, 0.0);
}
