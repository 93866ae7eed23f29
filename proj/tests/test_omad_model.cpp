#include <gtest/gtest.h>

#include "omad/errors.hpp"
#include "omad/omad_model.hpp"
#include "test_support.hpp"

namespace omad {
namespace {

using testing::Rng;

KinematicTree hinge_tree() {
  return KinematicTree(2, {{JointType::Free, -1, 0}, {JointType::Revolute, 0, 1}}, {0, 1});
}

TEST(ShapeApply, StandardBasisVectorSelectsColumn) {
  Rng rng(1);
  ShapeBasis B{MatX::NullaryExpr(12, 3, [&] { return testing::uniform(rng, -1, 1); })};
  for (int i = 0; i < 3; ++i) {
    const Keypoints P = shape_apply(B, VecX::Unit(3, i));
    EXPECT_EQ(flatten(P), VecX(B.matrix.col(i)));
  }
  EXPECT_TRUE(shape_apply(B, VecX::Zero(3)).isZero(0.0));
}

TEST(ShapeApply, TwoKeypointHandCase) {
  ShapeBasis B{MatX::Zero(6, 2)};
  B.matrix(0, 0) = 1.0;  // b1 = (1,0,0, 0,0,0)
  B.matrix(3, 1) = 1.0;  // b2 = (0,0,0, 1,0,0)
  const Keypoints P = shape_apply(B, VecX::Map(std::vector<double>{2.0, 3.0}.data(), 2));
  Keypoints expect(2, 3);
  expect << 2, 0, 0, 3, 0, 0;
  EXPECT_EQ(P, expect);
}

TEST(ShapeApply, DimensionMismatch) {
  ShapeBasis B{MatX::Zero(6, 2)};
  EXPECT_THROW(shape_apply(B, VecX::Zero(3)), ContractViolation);
}

TEST(ShapeApply, LinearInBeta) {
  Rng rng(2);
  ShapeBasis B{MatX::NullaryExpr(24, 4, [&] { return testing::uniform(rng, -1, 1); })};
  for (int t = 0; t < 100; ++t) {
    const VecX b1 = VecX::NullaryExpr(4, [&] { return testing::uniform(rng, -2, 2); });
    const VecX b2 = VecX::NullaryExpr(4, [&] { return testing::uniform(rng, -2, 2); });
    const double a = testing::uniform(rng, -3, 3), c = testing::uniform(rng, -3, 3);
    const Keypoints lhs = shape_apply(B, a * b1 + c * b2);
    const Keypoints rhs = a * shape_apply(B, b1) + c * shape_apply(B, b2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ShapeApply, ZeroMeanBasisGivesZeroCenteredShapes) {
  Rng rng(3);
  MatX B = MatX::NullaryExpr(30, 3, [&] { return testing::uniform(rng, -1, 1); });
  for (int k = 0; k < 3; ++k) {
    Keypoints col = unflatten(B.col(k));
    col.rowwise() -= col.colwise().mean();
    B.col(k) = flatten(col);
  }
  for (int t = 0; t < 100; ++t) {
    const VecX beta = VecX::NullaryExpr(3, [&] { return testing::uniform(rng, -5, 5); });
    EXPECT_LT(shape_apply(ShapeBasis{B}, beta).colwise().mean().norm(), 1e-8);
  }
}

TEST(JointApply, BiasOnlyNetwork) {
  const KinematicTree tree = hinge_tree();
  JointFunctionWeights w{MatX::Zero(4, 2), VecX::Zero(4), MatX::Zero(6, 4), VecX::Zero(6)};
  w.b2 << 0, 0, 2, 1, 1, 1;
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const VecX beta = VecX::NullaryExpr(2, [&] { return testing::uniform(rng, -3, 3); });
    const JointParamSet p = joint_apply(w, beta, tree);
    ASSERT_FALSE(p[0].has_value());
    EXPECT_EQ(p[1]->direction, Vec3(0, 0, 1));
    EXPECT_EQ(p[1]->pivot, Vec3(1, 1, 1));
  }
}

TEST(JointApply, ReluKillsNegativeInputGivingDegenerateDirection) {
  const KinematicTree tree = hinge_tree();
  JointFunctionWeights w{MatX::Ones(1, 1), VecX::Zero(1), MatX::Zero(6, 1), VecX::Zero(6)};
  w.W2(0, 0) = 1.0;
  VecX beta(1);
  beta << -1.0;
  EXPECT_THROW(joint_apply(w, beta, tree), DegenerateDirection);
  beta << 1.0;
  EXPECT_EQ(joint_apply(w, beta, tree)[1]->direction, Vec3(1, 0, 0));
}

TEST(JointApply, MatchesScalarLoopOracle) {
  Rng rng(5);
  const KinematicTree tree(3, {{JointType::Free, -1, 0}, {JointType::Revolute, 0, 1}, {JointType::Prismatic, 0, 2}},
                           {0, 1, 2});
  for (int t = 0; t < 50; ++t) {
    const JointFunctionWeights w = testing::random_gamma(rng, 4, 16, 12);
    const VecX beta = VecX::NullaryExpr(4, [&] { return testing::uniform(rng, -1, 1); });
    const std::vector<double> raw = testing::mlp_oracle(w, beta);
    const JointParamSet p = joint_apply(w, beta, tree);
    for (int s = 0; s < 2; ++s) {
      const Vec3 d(raw[6 * s], raw[6 * s + 1], raw[6 * s + 2]);
      const Vec3 q(raw[6 * s + 3], raw[6 * s + 4], raw[6 * s + 5]);
      const auto& jp = *p[static_cast<std::size_t>(s + 1)];
      EXPECT_LT((jp.direction - d / d.norm()).norm(), 1e-12);
      EXPECT_LT((jp.pivot - q).norm(), 1e-12);
      EXPECT_NEAR(jp.direction.norm(), 1.0, 1e-9);
    }
  }
}

TEST(JointApply, FiniteDifferencesMatchPiecewiseLinearJacobian) {
  Rng rng(6);
  const KinematicTree tree = hinge_tree();
  int checked = 0;
  for (int t = 0; t < 100; ++t) {
    const JointFunctionWeights w = testing::random_gamma(rng, 3, 8, 6);
    const VecX beta = VecX::NullaryExpr(3, [&] { return testing::uniform(rng, -1, 1); });
    const JointFunctionEval e = joint_forward(w, beta);
    if (kink_margin(e) < 1e-3) continue;
    const VecX mask = (e.pre.array() > 0.0).cast<double>();
    const MatX analytic = w.W2 * mask.asDiagonal() * w.W1;
    const VecX dir = VecX::NullaryExpr(3, [&] { return testing::uniform(rng, -1, 1); });
    const double h = 1e-6;
    const VecX fd = (joint_forward(w, beta + h * dir).raw - joint_forward(w, beta - h * dir).raw) / (2 * h);
    const VecX an = analytic * dir;
    EXPECT_LE((fd - an).norm(), 1e-6 * std::max(1.0, an.norm()));
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(OmadPrior, ValidateCatchesInconsistencies) {
  Rng rng(7);
  OmadPrior p = testing::random_prior(rng, 3, 2, 3, 5);
  EXPECT_NO_THROW(p.validate());
  OmadPrior bad = p;
  bad.basis.matrix.conservativeResize(bad.basis.matrix.rows() - 3, Eigen::NoChange);
  EXPECT_THROW(bad.validate(), ContractViolation);
  bad = p;
  bad.gamma.W2.conservativeResize(6, Eigen::NoChange);
  bad.gamma.b2.conservativeResize(6);
  EXPECT_THROW(bad.validate(), ContractViolation);
  bad = p;
  bad.rest_states = testing::random_states(rng, bad.tree);
  EXPECT_THROW(bad.validate(), ContractViolation);
}

}  // namespace
}  // namespace omad
