#include "epoch_active/surrogate.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace epoch_active;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

const SurrogateSpec kSq = squared_surrogate();
const SurrogateSpec kLog = logistic_surrogate(1.0, 2);

}  // namespace

TEST(Potential, Examples) {
  EXPECT_DOUBLE_EQ(potential(kSq, vec({0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(potential(kSq, vec({1, 1})), 1.0);
  EXPECT_NEAR(potential(kLog, vec({0, 0})), std::log(2.0), 1e-15);
}

TEST(Potential, LogisticIsStableForLargeScores) {
  EXPECT_NEAR(potential(kLog, vec({700, 700})), 700.0 + std::log(2.0), 1e-9);
  EXPECT_TRUE(std::isfinite(potential(kLog, vec({-700, 700}))));
}

TEST(Potential, RejectsNonFinite) {
  EXPECT_THROW(potential(kSq, vec({NAN, 0})), std::invalid_argument);
  EXPECT_THROW(potential(kLog, vec({INFINITY, 0})), std::invalid_argument);
}

TEST(SurrogateLoss, Examples) {
  EXPECT_DOUBLE_EQ(surrogate_loss(kSq, vec({0, 0}), 0), 0.0);
  EXPECT_NEAR(surrogate_loss(kLog, vec({0, 0}), 0), std::log(2.0), 1e-15);
  // 1/2 (0.5625 + 0.0625) - 0.75
  EXPECT_DOUBLE_EQ(surrogate_loss(kSq, vec({0.75, 0.25}), 0), -0.4375);
  EXPECT_THROW(surrogate_loss(kSq, vec({0.5, 0.5}), 2), std::invalid_argument);
}

TEST(SurrogateLoss, SquaredAffineEquivalenceOnSimplex) {
  Rng rng = make_stream(1, Stream::evaluation);
  for (int i = 0; i < 200; ++i) {
    const double a = uniform01(rng);
    const Vector v = vec({a, 1.0 - a});
    for (ClassIndex y = 0; y < 2; ++y) {
      Vector e = Vector::Zero(2);
      e[static_cast<Eigen::Index>(y)] = 1.0;
      EXPECT_NEAR(surrogate_loss(kSq, v, y), 0.5 * (v - e).squaredNorm() - 0.5, 1e-12);
    }
  }
}

TEST(Link, Examples) {
  const Vector p = link(kLog, vec({0, 0}));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  const Vector q = link(kLog, vec({std::log(3.0), 0}));
  EXPECT_NEAR(q[0], 0.75, 1e-15);
  EXPECT_NEAR(q[1], 0.25, 1e-15);
  const Vector r = link(kSq, vec({0.3, 0.7}));
  EXPECT_EQ(r, vec({0.3, 0.7}));
}

TEST(Link, SquaredRequiresSimplex) {
  EXPECT_THROW(link(kSq, vec({0.6, 0.6})), std::domain_error);
  EXPECT_THROW(link(kSq, vec({1.2, -0.2})), std::domain_error);
  EXPECT_NO_THROW(link(kSq, vec({0.5 + 5e-7, 0.5})));
}

TEST(Link, MatchesFiniteDifferenceOfPotential) {
  Rng rng = make_stream(2, Stream::evaluation);
  const SurrogateSpec log3 = logistic_surrogate(2.0, 3);
  for (int i = 0; i < 100; ++i) {
    const Vector v = vec({uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)});
    const Vector g = link(log3, v);
    for (Eigen::Index j = 0; j < 3; ++j) {
      Vector hi = v, lo = v;
      hi[j] += 1e-5;
      lo[j] -= 1e-5;
      EXPECT_NEAR((potential(log3, hi) - potential(log3, lo)) / 2e-5, g[j], 1e-6);
    }
  }
}

TEST(Bregman, SquaredIsExactlyHalfDistance) {
  Rng rng = make_stream(3, Stream::evaluation);
  for (int i = 0; i < 100; ++i) {
    const double a = uniform01(rng), b = uniform01(rng);
    const Vector v = vec({a, 1 - a}), w = vec({b, 1 - b});
    const double bregman = potential(kSq, v) - potential(kSq, w) - link(kSq, w).dot(v - w);
    EXPECT_NEAR(bregman, 0.5 * (v - w).squaredNorm(), 1e-9);
  }
}

TEST(Bregman, LogisticWithinConfiguredConstants) {
  const double R = 1.0;
  const SurrogateSpec spec = logistic_surrogate(R, 3);
  Rng rng = make_stream(4, Stream::evaluation);
  for (int i = 0; i < 200; ++i) {
    // Zero-mean scores in [-R, R]^3: the softmax Hessian vanishes along the all-ones direction.
    Vector v(3), w(3);
    for (Eigen::Index j = 0; j < 3; ++j) {
      v[j] = uniform(rng, -R / 2, R / 2);
      w[j] = uniform(rng, -R / 2, R / 2);
    }
    v.array() -= v.mean();
    w.array() -= w.mean();
    const Vector dp = v - w;
    const double bregman = potential(spec, v) - potential(spec, w) - link(spec, w).dot(dp);
    EXPECT_GE(bregman, 0.5 * spec.beta_phi * dp.squaredNorm() - 1e-12);
    EXPECT_LE(bregman, 0.5 * spec.l_phi * dp.squaredNorm() + 1e-12);
  }
}

TEST(Margin, Examples) {
  EXPECT_NEAR(margin(vec({0.7, 0.2, 0.1})), 0.5, 1e-15);
  EXPECT_DOUBLE_EQ(margin(vec({0.5, 0.5})), 0.0);
  EXPECT_DOUBLE_EQ(margin(vec({1, 0, 0})), 1.0);
}

TEST(Gap, Examples) {
  EXPECT_NEAR(gap(vec({0.5, 0.3, 0.2}), 2), 0.3, 1e-15);
  EXPECT_DOUBLE_EQ(gap(vec({0.5, 0.3, 0.2}), 0), 0.0);
  EXPECT_DOUBLE_EQ(gap(vec({0.25, 0.25, 0.5}), 0), 0.25);
  EXPECT_THROW(gap(vec({0.5, 0.5}), 2), std::invalid_argument);
}

TEST(Classify, Examples) {
  const SurrogateSpec log3 = logistic_surrogate(2.0, 3);
  EXPECT_EQ(classify(log3, vec({2, 1, 0})), 0u);
  EXPECT_EQ(classify(kSq, vec({0.2, 0.8})), 1u);
  EXPECT_EQ(classify(kLog, vec({0, 0})), 0u);
}

TEST(Classify, LogisticShiftInvariant) {
  Rng rng = make_stream(5, Stream::evaluation);
  const SurrogateSpec log4 = logistic_surrogate(3.0, 4);
  for (int i = 0; i < 100; ++i) {
    Vector v(4);
    for (Eigen::Index j = 0; j < 4; ++j) v[j] = uniform(rng, -3, 3);
    EXPECT_EQ(classify(log4, v), classify(log4, Vector(v.array() + uniform(rng, -50, 50))));
  }
}

TEST(SurrogateSpec, Validation) {
  EXPECT_THROW((SurrogateSpec{SurrogateKind::squared, 0.5, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((SurrogateSpec{SurrogateKind::logistic, 2.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW(logistic_surrogate(1.0, 3).validate());
  EXPECT_EQ(surrogate_kind_from_string("logistic"), SurrogateKind::logistic);
  EXPECT_THROW(surrogate_kind_from_string("hinge"), std::invalid_argument);
}
