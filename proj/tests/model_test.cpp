#include "heavytail/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gtest/gtest.h"
#include "support/finite_diff.hpp"

using namespace heavytail;
using heavytail::testing::central_difference;
using heavytail::testing::max_rel_err;

namespace {

std::size_t argmax(const std::vector<double>& v) {
  return std::max_element(v.begin(), v.end()) - v.begin();
}

}  // namespace

TEST(Extractor, ZeroWeightsGiveZeroOutput) {
  Model m(4, 8, 3, 2, HeadKind::Linear, 1);
  for (Tensor* p : {&m.extractor().w1, &m.extractor().b1, &m.extractor().w2,
                    &m.extractor().b2}) {
    std::fill(p->data.begin(), p->data.end(), 0.0);
  }
  const auto f = m.feature_values(std::vector<double>{1.0, -2.0, 3.0, 0.5});
  EXPECT_EQ(f, std::vector<double>(3, 0.0));
}

TEST(Extractor, OutputShapeContract) {
  Model m(5, 16, 7, 3, HeadKind::Cosine, 2);
  const Tensor f = extract(m, std::vector<double>{1, 2, 3, 4, 5});
  EXPECT_EQ(f.shape, (Shape{7}));
  EXPECT_THROW(extract(m, std::vector<double>{1, 2}), ShapeError);
}

TEST(Extractor, GradientCheckThroughBothLayers) {
  Model m(3, 6, 4, 2, HeadKind::Linear, 5);
  const std::vector<double> x{0.7, -1.3, 0.4};
  for (Tensor* p : m.params()) {
    auto loss = [&] {
      Tape tape;
      auto bound = m.bind(tape, true);
      auto f = m.features(tape, bound, tape.input(Tensor::from_vector(x)));
      return tape.scalar(tape.softmax_cross_entropy(
          m.logits(tape, bound, f), 1));
    };
    auto fd = central_difference(loss, p->data, 1e-5);
    p->zero_grad();
    {
      Tape tape;
      auto bound = m.bind(tape, true);
      auto f = m.features(tape, bound, tape.input(Tensor::from_vector(x)));
      tape.backward(tape.softmax_cross_entropy(m.logits(tape, bound, f), 1));
    }
    EXPECT_LT(max_rel_err(*p->grad, fd), 1e-4);
  }
}

TEST(LinearHead, IdentityAndBiasOnly) {
  LinearHead head;
  head.weight = Tensor::from_matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  head.bias = Tensor::zeros({3});
  const Tensor h = Tensor::from_vector({1, 0, 0});
  EXPECT_EQ(linear_logits(h, head).data, (std::vector<double>{1, 0, 0}));

  head.weight = Tensor::zeros({3, 3});
  head.bias = Tensor::from_vector({0.5, -1.0, 2.0});
  EXPECT_EQ(linear_logits(h, head).data, (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(LinearHead, MatchesHandMatmulOracle) {
  Rng rng(9);
  LinearHead head;
  head.weight = Tensor::zeros({4, 3});
  head.bias = Tensor::zeros({4});
  for (auto& v : head.weight.data) v = rng.uniform(-1, 1);
  for (auto& v : head.bias.data) v = rng.uniform(-1, 1);
  std::vector<double> h{0.3, -0.8, 1.2};
  const auto logits = linear_logits(Tensor::from_vector(h), head);
  for (std::size_t i = 0; i < 4; ++i) {
    double expect = head.bias[i];
    for (std::size_t j = 0; j < 3; ++j) expect += head.weight(i, j) * h[j];
    EXPECT_NEAR(logits[i], expect, 1e-15);
  }
}

TEST(CosineHead, ParallelRowScoresTau) {
  CosineHead head;
  head.weight = Tensor::from_matrix(2, 3, {2, 4, 4, 1, 0, 0});
  head.tau = Tensor::scalar(1.0);
  const Tensor h = Tensor::from_vector({1, 2, 2});  // parallel to row 0
  const auto logits = cosine_logits(h, head);
  EXPECT_NEAR(logits[0], 1.0, 1e-12);
  head.tau = Tensor::scalar(2.0);
  const auto doubled = cosine_logits(h, head);
  EXPECT_NEAR(doubled[0], 2.0 * logits[0], 1e-12);
  EXPECT_NEAR(doubled[1], 2.0 * logits[1], 1e-12);
}

TEST(CosineHead, ScaleInvarianceAndBounds) {
  Rng rng(21);
  CosineHead head;
  head.weight = Tensor::zeros({5, 4});
  for (auto& v : head.weight.data) v = rng.uniform(0.1, 1.0);
  head.tau = Tensor::scalar(1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> h(4);
    for (auto& v : h) v = rng.uniform(0.1, 2.0);
    const double alpha = std::exp(rng.uniform(-5.0, 5.0));
    auto base = cosine_logits(Tensor::from_vector(h), head);
    std::vector<double> scaled = h;
    for (auto& v : scaled) v *= alpha;
    auto rescaled = cosine_logits(Tensor::from_vector(scaled), head);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(base[i], rescaled[i], 1e-10);
      EXPECT_LE(std::fabs(base[i]), 1.0 + 1e-12);  // pre-tau bound, tau = 1
    }
  }
}

TEST(CosineHead, DegenerateInputsError) {
  CosineHead head;
  head.weight = Tensor::from_matrix(2, 2, {1, 0, 0, 0});  // row 1 is zero
  head.tau = Tensor::scalar(1.0);
  EXPECT_THROW(cosine_logits(Tensor::from_vector({1, 1}), head),
               DegenerateInputError);
  head.weight = Tensor::from_matrix(2, 2, {1, 0, 0, 1});
  EXPECT_THROW(cosine_logits(Tensor::from_vector({0, 0}), head),
               DegenerateInputError);
}

TEST(Heads, RowRescalingNeverFlipsCosineArgmaxButFlipsLinear) {
  Rng rng(33);
  Model m(6, 8, 4, 5, HeadKind::Cosine, 7);
  // cosine: rescaling any single row by alpha > 0 never changes the argmax
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(6);
    for (auto& v : x) v = rng.uniform(-2, 2);
    const auto before = m.logit_values(x);
    CosineHead scaled = m.cosine_head();
    const std::size_t row = rng.uniform_index(5);
    const double alpha = std::exp(rng.uniform(-4.0, 4.0));
    for (std::size_t j = 0; j < 4; ++j) scaled.weight(row, j) *= alpha;
    const auto after =
        cosine_logits(Tensor::from_vector(m.feature_values(x)), scaled).data;
    EXPECT_EQ(argmax(before), argmax(after));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(before[i], after[i], 1e-10);
  }

  // linear: exhibit a flip under row rescaling
  LinearHead head;
  head.weight = Tensor::from_matrix(2, 2, {1, 0, 0.4, 0});
  head.bias = Tensor::zeros({2});
  const Tensor h = Tensor::from_vector({1, 0});
  EXPECT_EQ(argmax(linear_logits(h, head).data), 0u);
  for (std::size_t j = 0; j < 2; ++j) head.weight(1, j) *= 10.0;
  EXPECT_EQ(argmax(linear_logits(h, head).data), 1u);
}

TEST(CosineHead, TauReceivesGradientUnderCrossEntropy) {
  Model m(3, 4, 3, 4, HeadKind::Cosine, 3);
  Tape tape;
  auto bound = m.bind(tape, true);
  auto f = m.features(tape, bound,
                      tape.input(Tensor::from_vector({0.4, -1.0, 2.0})));
  tape.backward(tape.softmax_cross_entropy(m.logits(tape, bound, f), 2));
  ASSERT_TRUE(m.cosine_head().tau.grad.has_value());
  EXPECT_NE((*m.cosine_head().tau.grad)[0], 0.0);
}

TEST(Model, SharedInitAcrossHeadKinds) {
  const Model a(10, 12, 6, 4, HeadKind::Linear, 99);
  const Model b(10, 12, 6, 4, HeadKind::Cosine, 99);
  EXPECT_EQ(a.extractor().w1.data, b.extractor().w1.data);
  EXPECT_EQ(a.extractor().b1.data, b.extractor().b1.data);
  EXPECT_EQ(a.extractor().w2.data, b.extractor().w2.data);
  EXPECT_EQ(a.extractor().b2.data, b.extractor().b2.data);
  EXPECT_EQ(a.linear_head().weight.data, b.cosine_head().weight.data);
  EXPECT_EQ(b.tau(), 1.0);

  const Model c(10, 12, 6, 4, HeadKind::Linear, 100);
  EXPECT_NE(a.extractor().w1.data, c.extractor().w1.data);
}

TEST(Model, InitBoundFollowsFanIn) {
  const Model m(16, 64, 32, 20, HeadKind::Cosine, 8);
  const double bound = 1.0 / std::sqrt(16.0);
  for (double v : m.extractor().w1.data) {
    EXPECT_GE(v, -bound);
    EXPECT_LE(v, bound);
  }
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  for (HeadKind kind : {HeadKind::Linear, HeadKind::Cosine}) {
    Model m(5, 6, 4, 3, kind, 17);
    std::ostringstream first;
    save_checkpoint(m, first);
    std::istringstream in(first.str());
    Model loaded = load_checkpoint(in);
    std::ostringstream second;
    save_checkpoint(loaded, second);
    EXPECT_EQ(first.str(), second.str());
    EXPECT_EQ(loaded.head_kind(), kind);
    EXPECT_EQ(loaded.input_dim(), 5u);
    EXPECT_EQ(loaded.num_classes(), 3u);
    // behavioral equality
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5};
    EXPECT_EQ(m.logit_values(x), loaded.logit_values(x));
  }
}

TEST(Checkpoint, MalformedInputsRejected) {
  {
    std::istringstream in("ckpt v2 1\n");
    EXPECT_THROW(load_checkpoint(in), ParseError);
  }
  {
    std::istringstream in("ckpt v1 2\nmeta.head_kind 0\n1\n");
    EXPECT_THROW(load_checkpoint(in), ParseError);  // truncated
  }
  {
    // value count disagrees with dims
    std::istringstream in("ckpt v1 1\nextractor.w1 2 2 2\n1 2 3\n");
    EXPECT_THROW(load_checkpoint(in), ParseError);
  }
  {
    Model m(3, 4, 2, 2, HeadKind::Linear, 1);
    std::ostringstream out;
    save_checkpoint(m, out);
    // drop the last two lines (head.bias entry)
    std::string text = out.str();
    for (int cut = 0; cut < 2; ++cut) {
      text.erase(text.find_last_of('\n', text.size() - 2) + 1);
    }
    std::istringstream in(text);
    EXPECT_THROW(load_checkpoint(in), ParseError);
  }
}
