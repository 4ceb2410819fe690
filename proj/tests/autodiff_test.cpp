#include "heavytail/autodiff.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "heavytail/rng.hpp"
#include "support/finite_diff.hpp"

using namespace heavytail;
using heavytail::testing::central_difference;
using heavytail::testing::max_rel_err;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Keeps relu inputs away from the kink so finite differences stay valid.
void nudge_from_zero(Tensor& t, double margin = 0.05) {
  for (auto& v : t.data) {
    if (std::fabs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tp;
  auto i2 = tp.input(Tensor::from_matrix(2, 2, {1, 0, 0, 1}));
  auto m = tp.input(Tensor::from_matrix(2, 2, {3, -1, 2, 5}));
  auto c = tp.matmul(i2, m);
  EXPECT_EQ(tp.value(c).data, (std::vector<double>{3, -1, 2, 5}));
}

TEST(Matmul, HandArithmetic) {
  Tape tp;
  auto a = tp.input(Tensor::from_matrix(2, 2, {1, 2, 3, 4}));
  auto b = tp.input(Tensor::from_matrix(2, 1, {1, 1}));
  auto c = tp.matmul(a, b);
  EXPECT_EQ(tp.value(c).shape, (Shape{2, 1}));
  EXPECT_EQ(tp.value(c).data, (std::vector<double>{3, 7}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tp;
  auto a = tp.input(Tensor::zeros({3, 4}));
  auto b = tp.input(Tensor::zeros({5, 2}));
  try {
    tp.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[3x4]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[5x2]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  a.requires_grad = true;
  auto loss = [&] {
    Tape tp;
    return tp.scalar(tp.sum(tp.matmul(tp.param(a), tp.input(b))));
  };
  auto fd = central_difference(loss, a.data);
  a.zero_grad();
  {
    Tape tp;
    tp.backward(tp.sum(tp.matmul(tp.param(a), tp.input(b))));
  }
  EXPECT_LT(max_rel_err(*a.grad, fd), 1e-6);
}

TEST(L2Normalize, ThreeFourFive) {
  Tape tp;
  auto v = tp.input(Tensor::from_vector({3, 4}));
  auto u = tp.l2_normalize(v);
  EXPECT_DOUBLE_EQ(tp.value(u)[0], 0.6);
  EXPECT_DOUBLE_EQ(tp.value(u)[1], 0.8);
}

TEST(L2Normalize, UnitVectorIsFixedPoint) {
  Tape tp;
  auto v = tp.input(Tensor::from_vector({0, 1, 0}));
  auto u = tp.l2_normalize(v);
  EXPECT_EQ(tp.value(u).data, (std::vector<double>{0, 1, 0}));
}

TEST(L2Normalize, ZeroVectorIsDegenerate) {
  Tape tp;
  auto v = tp.input(Tensor::from_vector({0, 0, 0}));
  EXPECT_THROW(tp.l2_normalize(v), DegenerateInputError);
}

TEST(L2Normalize, ScaleInvariantForPositiveScale) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor v = random_tensor({8}, rng);
    nudge_from_zero(v, 0.2);
    const double alpha = std::exp(rng.uniform(-4.0, 4.0));
    Tensor scaled = v;
    for (auto& x : scaled.data) x *= alpha;
    Tape tp;
    auto u1 = tp.l2_normalize(tp.input(v));
    auto u2 = tp.l2_normalize(tp.input(scaled));
    for (std::size_t i = 0; i < 8; ++i) {
      EXPECT_NEAR(tp.value(u1)[i], tp.value(u2)[i], 1e-12);
    }
  }
}

TEST(L2Normalize, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor v = random_tensor({8}, rng);
  nudge_from_zero(v, 0.2);
  v.requires_grad = true;
  // project onto a fixed direction so the loss is scalar and non-symmetric
  Tensor dir = random_tensor({8}, rng);
  auto loss = [&] {
    Tape tp;
    return tp.scalar(tp.dot(tp.l2_normalize(tp.param(v)), tp.input(dir)));
  };
  auto fd = central_difference(loss, v.data);
  v.zero_grad();
  {
    Tape tp;
    tp.backward(tp.dot(tp.l2_normalize(tp.param(v)), tp.input(dir)));
  }
  EXPECT_LT(max_rel_err(*v.grad, fd), 1e-6);
}

TEST(CosineSimilarity, IdenticalDirections) {
  Tape tp;
  auto a = tp.input(Tensor::from_vector({1, 0}));
  auto b = tp.input(Tensor::from_vector({1, 0}));
  EXPECT_DOUBLE_EQ(tp.scalar(tp.cosine_similarity(a, b)), 1.0);
}

TEST(CosineSimilarity, Orthogonality) {
  Tape tp;
  auto a = tp.input(Tensor::from_vector({1, 0}));
  auto b = tp.input(Tensor::from_vector({0, 1}));
  EXPECT_DOUBLE_EQ(tp.scalar(tp.cosine_similarity(a, b)), 0.0);
}

TEST(CosineSimilarity, GradientVanishesAtParallelInputs) {
  Rng rng(5);
  Tensor b = random_tensor({6}, rng);
  nudge_from_zero(b, 0.2);
  Tensor a = b;
  for (auto& x : a.data) x *= 2.0;
  a.requires_grad = true;
  Tape tp;
  tp.backward(tp.cosine_similarity(tp.param(a), tp.input(b)));
  for (double g : *a.grad) EXPECT_NEAR(g, 0.0, 1e-12);
}

TEST(CosineSimilarity, InvariantToPositiveRescalingOfEitherSide) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = random_tensor({5}, rng);
    Tensor b = random_tensor({5}, rng);
    nudge_from_zero(a, 0.2);
    nudge_from_zero(b, 0.2);
    const double alpha = std::exp(rng.uniform(-3.0, 3.0));
    const double beta = std::exp(rng.uniform(-3.0, 3.0));
    Tensor a2 = a;
    Tensor b2 = b;
    for (auto& x : a2.data) x *= alpha;
    for (auto& x : b2.data) x *= beta;
    Tape tp;
    const double c1 = tp.scalar(tp.cosine_similarity(tp.input(a), tp.input(b)));
    const double c2 =
        tp.scalar(tp.cosine_similarity(tp.input(a2), tp.input(b2)));
    EXPECT_NEAR(c1, c2, 1e-12);
    EXPECT_LE(std::fabs(c1), 1.0 + 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Tape tp;
  auto l = tp.input(Tensor::from_vector({0.5, 0.5, 0.5, 0.5}));
  EXPECT_NEAR(tp.scalar(tp.softmax_cross_entropy(l, 2)), std::log(4.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, StableAtExtremeLogits) {
  Tape tp;
  auto l = tp.input(Tensor::from_vector({1000.0, 0.0}));
  const double loss = tp.scalar(tp.softmax_cross_entropy(l, 0));
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, TargetOutOfRange) {
  Tape tp;
  auto l = tp.input(Tensor::from_vector({0.0, 1.0}));
  EXPECT_THROW(tp.softmax_cross_entropy(l, 2), IndexError);
}

TEST(SoftmaxCrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Rng rng(17);
  Tensor l = random_tensor({5}, rng);
  l.requires_grad = true;
  auto loss = [&] {
    Tape tp;
    return tp.scalar(tp.softmax_cross_entropy(tp.param(l), 3));
  };
  auto fd = central_difference(loss, l.data);
  l.zero_grad();
  {
    Tape tp;
    tp.backward(tp.softmax_cross_entropy(tp.param(l), 3));
  }
  EXPECT_LT(max_rel_err(*l.grad, fd), 1e-6);
  // closed form
  double m = *std::max_element(l.data.begin(), l.data.end());
  double z = 0;
  for (double x : l.data) z += std::exp(x - m);
  for (std::size_t j = 0; j < 5; ++j) {
    const double p = std::exp(l.data[j] - m) / z;
    EXPECT_NEAR((*l.grad)[j], p - (j == 3 ? 1.0 : 0.0), 1e-12);
  }
}

TEST(SoftmaxCrossEntropy, NonNegativeAndSmallOnlyWhenConfident) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor l = random_tensor({4}, rng, -10.0, 10.0);
    Tape tp;
    EXPECT_GE(tp.scalar(tp.softmax_cross_entropy(tp.input(l), 1)), 0.0);
  }
  // loss approaches zero only as the correct logit dominates
  Tape tp;
  auto nearly = tp.input(Tensor::from_vector({40.0, 0.0}));
  EXPECT_GT(tp.scalar(tp.softmax_cross_entropy(tp.input(
                Tensor::from_vector({1.0, 0.0})), 0)), 0.1);
  EXPECT_LT(tp.scalar(tp.softmax_cross_entropy(nearly, 0)), 1e-12);
}

TEST(Pointwise, ScalarBroadcastOnlyOtherMismatchThrows) {
  Tape tp;
  auto s = tp.input(Tensor::scalar(2.0));
  auto v = tp.input(Tensor::from_vector({1, 2, 3}));
  auto w = tp.input(Tensor::from_vector({1, 2}));
  EXPECT_EQ(tp.value(tp.add(s, v)).data, (std::vector<double>{3, 4, 5}));
  EXPECT_EQ(tp.value(tp.mul(v, s)).data, (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(tp.value(tp.sub(v, s)).data, (std::vector<double>{-1, 0, 1}));
  EXPECT_THROW(tp.add(v, w), ShapeError);
  EXPECT_THROW(tp.mul(v, w), ShapeError);
}

TEST(Relu, HingeValues) {
  Tape tp;
  auto v = tp.input(Tensor::from_vector({-2.0, 0.0, 3.5}));
  EXPECT_EQ(tp.value(tp.relu(v)).data, (std::vector<double>{0, 0, 3.5}));
}

TEST(Backward, AccumulatesAcrossTapesUntilCallerZeroes) {
  Tensor w = Tensor::from_vector({1.0, 2.0});
  w.requires_grad = true;
  for (int pass = 0; pass < 2; ++pass) {
    Tape tp;
    tp.backward(tp.sum(tp.param(w)));
  }
  EXPECT_EQ(*w.grad, (std::vector<double>{2.0, 2.0}));
  w.zero_grad();
  EXPECT_EQ(*w.grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, PopulatesEveryRequiringNodeOnPath) {
  Tensor w = Tensor::from_vector({0.5, -1.5, 2.0});
  w.requires_grad = true;
  Tape tp;
  auto p = tp.param(w);
  auto u = tp.relu(p);
  auto s = tp.mean(u);
  tp.backward(s);
  EXPECT_TRUE(tp.value(p).grad.has_value());
  EXPECT_TRUE(tp.value(u).grad.has_value());
  EXPECT_TRUE(tp.value(s).grad.has_value());
  EXPECT_EQ((*w.grad)[0], 1.0 / 3.0);
  EXPECT_EQ((*w.grad)[1], 0.0);
}

TEST(Sgd, PlainStepAndMomentum) {
  Tensor w = Tensor::from_vector({1.0, 1.0});
  w.requires_grad = true;
  w.grad = std::vector<double>{0.5, -0.5};
  sgd_step({&w}, 0.1);
  EXPECT_DOUBLE_EQ(w.data[0], 0.95);
  EXPECT_DOUBLE_EQ(w.data[1], 1.05);

  SgdState st;
  Tensor v = Tensor::from_vector({0.0});
  v.requires_grad = true;
  v.grad = std::vector<double>{1.0};
  sgd_step({&v}, 1.0, 0.9, 0.0, &st);
  EXPECT_DOUBLE_EQ(v.data[0], -1.0);
  v.grad = std::vector<double>{1.0};
  sgd_step({&v}, 1.0, 0.9, 0.0, &st);   // velocity = 0.9*1 + 1
  EXPECT_DOUBLE_EQ(v.data[0], -2.9);
  EXPECT_THROW(sgd_step({&v}, 0.1, 0.9), ParameterError);
}

// Every differentiable op against the central-difference oracle on random
// small shapes, ten seeds, step 1e-5, relative tolerance 1e-4.
TEST(GradientFidelity, AllOpsAcrossTenSeeds) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(derive_seed(seed, {0xF00D}));
    const std::size_t m = 2 + rng.uniform_index(3);
    const std::size_t k = 2 + rng.uniform_index(3);
    const std::size_t n = 2 + rng.uniform_index(3);

    struct Case {
      const char* name;
      Tensor params;                      // checked argument
      std::function<double(Tape&, Tape::Id)> forward;  // param id -> loss
    };

    Tensor mat_a = random_tensor({m, k}, rng);
    Tensor mat_b = random_tensor({k, n}, rng);
    Tensor vec_k = random_tensor({k}, rng);
    Tensor vec_m = random_tensor({m}, rng);
    Tensor vec_d = random_tensor({k}, rng);
    Tensor w_cd = random_tensor({m, k}, rng);
    Tensor tau = Tensor::scalar(rng.uniform(0.5, 2.0));
    nudge_from_zero(vec_k, 0.2);
    nudge_from_zero(vec_d, 0.2);
    nudge_from_zero(w_cd, 0.2);

    // fixed right-hand side so each loss is a pure function of the param
    Tensor rhs_mk = random_tensor({m, k}, rng);

    std::vector<Case> cases;
    cases.push_back({"add", mat_a, [&, rhs_mk](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.add(p, tp.input(rhs_mk))));
    }});
    cases.push_back({"sub", mat_a, [&, rhs_mk](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.sub(tp.input(rhs_mk), p)));
    }});
    cases.push_back({"mul", mat_a, [&, rhs_mk](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.mul(p, tp.input(rhs_mk))));
    }});
    cases.push_back({"scalar_broadcast", Tensor::scalar(0.7),
                     [&, rhs_mk](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.mul(p, tp.input(rhs_mk))));
    }});
    cases.push_back({"scalar_mul_add", mat_a, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.scalar_add(tp.scalar_mul(p, -1.7), 0.3)));
    }});
    cases.push_back({"matmul_lhs", mat_a, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.sum(tp.matmul(p, tp.input(mat_b))));
    }});
    cases.push_back({"matmul_rhs", mat_b, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.sum(tp.matmul(tp.input(mat_a), p)));
    }});
    cases.push_back({"matvec_w", w_cd, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.matvec(p, tp.input(vec_k))));
    }});
    cases.push_back({"matvec_x", vec_k, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.matvec(tp.input(w_cd), p)));
    }});
    cases.push_back({"dot", vec_k, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.dot(p, tp.input(vec_d)));
    }});
    cases.push_back({"relu", mat_a, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.relu(p)));
    }});
    cases.push_back({"l2_normalize", vec_k, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.dot(tp.l2_normalize(p), tp.input(vec_d)));
    }});
    cases.push_back({"cosine_similarity_a", vec_k, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.cosine_similarity(p, tp.input(vec_d)));
    }});
    cases.push_back({"cosine_similarity_b", vec_d, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.cosine_similarity(tp.input(vec_k), p));
    }});
    cases.push_back({"softmax_ce", vec_m, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.softmax_cross_entropy(p, m - 1));
    }});
    cases.push_back({"sum", mat_a, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.sum(tp.mul(p, p)));
    }});
    cases.push_back({"mean", mat_a, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(tp.mul(p, p)));
    }});
    cases.push_back({"add_n", vec_k, [&](Tape& tp, Tape::Id p) {
      auto a = tp.dot(p, tp.input(vec_d));
      auto b = tp.dot(p, p);
      return tp.scalar(tp.mean_of({a, b, a}));
    }});
    cases.push_back({"cosine_scores_w", w_cd, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.mean(
          tp.cosine_scores(p, tp.input(vec_k), tp.input(tau))));
    }});
    cases.push_back({"cosine_scores_h", vec_k, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.softmax_cross_entropy(
          tp.cosine_scores(tp.input(w_cd), p, tp.input(tau)), 0));
    }});
    cases.push_back({"cosine_scores_tau", tau, [&](Tape& tp, Tape::Id p) {
      return tp.scalar(tp.softmax_cross_entropy(
          tp.cosine_scores(tp.input(w_cd), tp.input(vec_k), p), 0));
    }});

    for (auto& c : cases) {
      Tensor p = c.params;
      p.requires_grad = true;
      auto loss = [&] {
        Tape tp;
        return c.forward(tp, tp.param(p));
      };
      auto fd = central_difference(loss, p.data, 1e-5);
      p.zero_grad();
      {
        Tape tp;
        auto root_val = c.forward(tp, tp.param(p));
        (void)root_val;
        tp.backward(tp.size() - 1);
      }
      EXPECT_LT(max_rel_err(*p.grad, fd), 1e-4)
          << "op " << c.name << " seed " << seed;
    }
  }
}
