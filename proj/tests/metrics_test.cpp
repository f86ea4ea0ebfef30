#include <gtest/gtest.h>

#include "atnbreak/metrics.hpp"
#include "test_support.hpp"

namespace atnbreak {
namespace {

TEST(AttackSuccessRate, CountsFlipsAmongCleanCorrect) {
  std::vector<int> labels(100, 1), clean(100, 1), adv(100, 1);
  for (int i = 0; i < 97; ++i) adv[i] = 2;
  const Rate r = attack_success_rate(labels, clean, adv);
  EXPECT_EQ(r.n, 100u);
  EXPECT_DOUBLE_EQ(r.value, 0.97);
}

TEST(AttackSuccessRate, CleanMistakesLeaveTheDenominator) {
  const std::vector<int> labels{0, 1, 2, 3}, clean{0, 0, 2, 0}, adv{1, 1, 2, 3};
  const Rate r = attack_success_rate(labels, clean, adv);
  EXPECT_EQ(r.n, 2u);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
}

TEST(AttackSuccessRate, EmptyDenominatorIsAnError) {
  const std::vector<int> labels{0, 1}, wrong{1, 0};
  EXPECT_THROW(attack_success_rate(labels, wrong, wrong), EvalError);
}

TEST(Cosine, Basics) {
  const std::vector<double> a{1, 0}, b{0, 2}, c{-3, 0};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, c), -1.0);
}

TEST(Retrieval, NegatedOrthogonalGalleryFailsEveryQuery) {
  const std::vector<DiffArray> queries{DiffArray({2}, {1, 0}), DiffArray({2}, {0, 1})};
  const std::vector<DiffArray> attacked{DiffArray({2}, {-1, 0}), DiffArray({2}, {0, -1})};
  const Rate r = retrieval_success_at_k(queries, attacked, 1);
  EXPECT_EQ(r.n, 2u);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
}

TEST(Retrieval, IdentityGalleryNeverSucceeds) {
  Rng rng(3);
  std::vector<DiffArray> g;
  for (int i = 0; i < 16; ++i) g.push_back(testing::random_array(rng, {8}));
  for (std::size_t k : {1u, 5u, 10u}) EXPECT_EQ(retrieval_success_at_k(g, g, k).value, 0.0);
}

TEST(Retrieval, BadK) {
  const std::vector<DiffArray> g{DiffArray({2}, {1, 0}), DiffArray({2}, {0, 1})};
  EXPECT_THROW(retrieval_success_at_k(g, g, 3), EvalError);
  EXPECT_THROW(retrieval_success_at_k(g, g, 0), EvalError);
}

TEST(Retrieval, SuccessIsMonotoneInK) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<DiffArray> q, g;
    for (int i = 0; i < 12; ++i) {
      q.push_back(testing::random_array(rng, {4}));
      g.push_back(testing::random_array(rng, {4}));
    }
    double prev = 1.0;
    for (std::size_t k = 1; k <= 12; ++k) {
      const double v = retrieval_success_at_k(q, g, k).value;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev);
      prev = v;
    }
    EXPECT_EQ(prev, 0.0);
  }
}

TEST(Dense, PerfectPrediction) {
  const std::vector<int> t{0, 1, 2, 2, 1};
  const DenseScore s = dense_score(t, t, 3);
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_EQ(s.miou, 1.0);
  EXPECT_EQ(s.tokens, 5u);
}

// Predicting one class for every token of a balanced mask: that class has
// IoU 1/K, every other class 0, so the mean over the K classes is 1/K^2
// while accuracy is 1/K.
TEST(Dense, SingleClassPredictionOnBalancedTruth) {
  for (std::size_t k : {2u, 3u, 4u, 5u}) {
    std::vector<int> truth;
    for (std::size_t c = 0; c < k; ++c)
      for (int rep = 0; rep < 6; ++rep) truth.push_back(static_cast<int>(c));
    const std::vector<int> pred(truth.size(), 0);
    const DenseScore s = dense_score(pred, truth, k);
    EXPECT_DOUBLE_EQ(s.accuracy, 1.0 / static_cast<double>(k));
    EXPECT_DOUBLE_EQ(s.miou, 1.0 / static_cast<double>(k * k));
  }
}

TEST(Dense, AbsentClassesAreSkipped) {
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 0, 1, 0};
  // class 0: |{0,1}∩{0,1,3}| / |{0,1,3}| = 2/3; class 1: 1/2; class 2 absent.
  EXPECT_DOUBLE_EQ(dense_score(pred, truth, 3).miou, (2.0 / 3.0 + 0.5) / 2.0);
}

TEST(Dense, ScoresStayInUnitInterval) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = testing::dim(rng, 5) + 1;
    std::vector<int> t(30), p(30);
    for (auto& v : t) v = rng.uniform_int(0, static_cast<int>(k) - 1);
    for (auto& v : p) v = rng.uniform_int(0, static_cast<int>(k) - 1);
    const DenseScore s = dense_score(p, t, k);
    EXPECT_GE(s.accuracy, 0.0);
    EXPECT_LE(s.accuracy, 1.0);
    EXPECT_GE(s.miou, 0.0);
    EXPECT_LE(s.miou, 1.0);
  }
}

TEST(Dense, LengthMismatchThrows) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_THROW(dense_score(a, b, 2), EvalError);
}

}  // namespace
}  // namespace atnbreak
