#include "epoch_active/funcclass.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace epoch_active;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Params random_feasible(const ClassSpec& cls, Rng& rng) {
  Vector t(static_cast<Eigen::Index>(cls.num_params()));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = standard_normal(rng);
  t *= cls.radius * uniform01(rng) / t.norm();
  return Params(t);
}

}  // namespace

TEST(Evaluate, Examples) {
  const ClassSpec bin = binary_ball_class(3);
  const ScoreVector a = evaluate(bin, zero_params(bin), vec({0.3, -0.2, 0.1}));
  EXPECT_EQ(a, vec({0.5, 0.5}));
  EXPECT_EQ(evaluate(bin, Params(vec({1, 0, 0})), vec({1, 0, 0})), vec({1.0, 0.0}));

  const ClassSpec mc = multiclass_linear_class(3, 3, 2.0);
  Vector W(9);
  W << 1, 0, 0, 0, 1, 0, 0, 0, 1;
  EXPECT_EQ(evaluate(mc, Params(W), vec({1, 0, 0})), vec({1, 0, 0}));
}

TEST(Evaluate, MulticlassIsRowMajor) {
  const ClassSpec mc = multiclass_linear_class(2, 3, 10.0);
  Vector W(6);
  W << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(evaluate(mc, Params(W), vec({1, 10})), vec({21, 43, 65}));
}

TEST(Evaluate, DimensionMismatchThrows) {
  const ClassSpec bin = binary_ball_class(2);
  EXPECT_THROW(evaluate(bin, zero_params(bin), vec({1, 0, 0})), std::invalid_argument);
  EXPECT_THROW(evaluate(bin, Params(vec({1})), vec({1, 0})), std::invalid_argument);
}

TEST(Project, Examples) {
  const ClassSpec bin = binary_ball_class(2);
  EXPECT_EQ(project(bin, Params(vec({2, 0}))).theta, vec({1, 0}));
  EXPECT_EQ(project(bin, Params(vec({0.3, 0.4}))).theta, vec({0.3, 0.4}));
  const ClassSpec mc = multiclass_linear_class(2, 2, 1.0);
  EXPECT_EQ(project(mc, Params(vec({2, 2, 2, 2}))).theta, vec({0.5, 0.5, 0.5, 0.5}));
}

TEST(Project, IdempotentAndNonExpansive) {
  const ClassSpec mc = multiclass_linear_class(3, 3, 1.5);
  Rng rng = make_stream(7, Stream::evaluation);
  for (int i = 0; i < 200; ++i) {
    Vector a(9), b(9);
    for (Eigen::Index j = 0; j < 9; ++j) {
      a[j] = 2 * standard_normal(rng);
      b[j] = 2 * standard_normal(rng);
    }
    const Params pa = project(mc, Params(a)), pb = project(mc, Params(b));
    EXPECT_TRUE(is_feasible(mc, pa));
    EXPECT_NEAR((project(mc, pa).theta - pa.theta).norm(), 0.0, 1e-15);
    EXPECT_LE((pa.theta - pb.theta).norm(), (a - b).norm() + 1e-12);
  }
}

TEST(ParamDistance, Examples) {
  const ClassSpec bin = binary_ball_class(1);
  const std::vector<Input> pts{vec({1})};
  const Params p(vec({1})), q(vec({0}));
  EXPECT_DOUBLE_EQ(param_distance_sq(bin, p, p, pts), 0.0);
  EXPECT_DOUBLE_EQ(param_distance_sq(bin, p, q, pts), 0.5);
  EXPECT_DOUBLE_EQ(param_distance_sq(bin, p, q, std::vector<Input>{}), 0.0);
}

TEST(ParamDistance, MatchesAnchorMetric) {
  Rng rng = make_stream(8, Stream::evaluation);
  for (const ClassSpec& cls : {binary_ball_class(3), multiclass_linear_class(3, 4, 2.0)}) {
    std::vector<Input> pts;
    for (int i = 0; i < 7; ++i) pts.push_back(vec({uniform(rng, -1, 1), uniform(rng, -1, 1), 0.1}));
    const Matrix A = anchor_metric(cls, pts);
    for (int i = 0; i < 20; ++i) {
      const Params p = random_feasible(cls, rng), q = random_feasible(cls, rng);
      const Vector d = p.theta - q.theta;
      EXPECT_NEAR(param_distance_sq(cls, p, q, pts), d.dot(A * d), 1e-12);
    }
  }
}

TEST(Properties, AffineAndConvex) {
  Rng rng = make_stream(9, Stream::evaluation);
  for (const ClassSpec& cls : {binary_ball_class(2), multiclass_linear_class(2, 3, 3.0)}) {
    for (int i = 0; i < 100; ++i) {
      const Params p = random_feasible(cls, rng), q = random_feasible(cls, rng);
      const double lam = uniform01(rng);
      const Params mix(lam * p.theta + (1 - lam) * q.theta);
      const Input x = vec({uniform(rng, -0.7, 0.7), uniform(rng, -0.7, 0.7)});
      EXPECT_TRUE(is_feasible(cls, mix));
      const Vector lhs = evaluate(cls, mix, x);
      const Vector rhs = lam * evaluate(cls, p, x) + (1 - lam) * evaluate(cls, q, x);
      EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Properties, BinaryAntisymmetry) {
  const ClassSpec bin = binary_ball_class(3);
  Rng rng = make_stream(10, Stream::evaluation);
  for (int i = 0; i < 100; ++i) {
    const Params p = random_feasible(bin, rng);
    const Input x = vec({uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5)});
    EXPECT_EQ(evaluate(bin, p, x)[0] + evaluate(bin, p, Input(-x))[0], 1.0);
  }
}

TEST(Jacobian, MatchesEvaluateAndPullback) {
  Rng rng = make_stream(11, Stream::evaluation);
  const ClassSpec mc = multiclass_linear_class(2, 3, 2.0);
  const Params p = random_feasible(mc, rng);
  const Input x = vec({0.3, -0.4});
  const Matrix J = score_jacobian(mc, x);
  EXPECT_LE((J * p.theta - evaluate(mc, p, x)).norm(), 1e-14);
  const Vector g = vec({1, -2, 0.5});
  EXPECT_LE((J.transpose() * g - pullback(mc, x, g)).norm(), 1e-14);

  const ClassSpec bin = binary_ball_class(2);
  const Matrix Jb = score_jacobian(bin, x);
  const Vector h = vec({0.25, -1});
  EXPECT_LE((Jb.transpose() * h - pullback(bin, x, h)).norm(), 1e-14);
}

TEST(ClassSpec, Validation) {
  EXPECT_THROW((ClassSpec{ClassKind::binary_ball_linear, 2, 3, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((ClassSpec{ClassKind::binary_ball_linear, 2, 2, 2.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW(multiclass_linear_class(2, 3, INFINITY).validate(), std::invalid_argument);
  EXPECT_THROW(require_compatible(multiclass_linear_class(2, 3, 1.0), squared_surrogate()), std::invalid_argument);
}
