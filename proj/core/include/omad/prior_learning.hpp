#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omad/kinematics.hpp"
#include "omad/omad_model.hpp"

namespace omad {

struct TrainingInstance {
  Keypoints keypoints;        // canonical, zero-centered
  JointParamSet joint_params; // ground-truth canonical axes
};

struct TrainingSet {
  KinematicTree tree;
  std::vector<TrainingInstance> instances;

  int keypoint_count() const { return tree.keypoint_count(); }
  /// Throws ContractViolation on inconsistent sizes, off-center instances or
  /// non-unit directions.
  void validate() const;
  /// 3M x N matrix, one flattened instance per column.
  MatX data_matrix() const;
};

struct LearnConfig {
  int basis_count = 3;
  int hidden = 64;
  double lambda = 1.0;
  double reg_weight = 1e-3;
  double sep_margin = 0.0;  // <= 0 selects 0.05 x data diameter
  double lr = 1e-2;
  double momentum = 0.9;
  int epochs = 2000;
  std::uint64_t seed = 0;
};

struct BasisFit {
  ShapeBasis basis;
  std::vector<VecX> betas;
  double reconstruction_error = 0.0;  // Frobenius norm of X - B [beta]
  VecX singular_values;
};

/// Rank-K_b truncated SVD of the stacked training shapes. B holds the leading
/// left singular vectors; beta_n = Sigma_K V_K^T e_n. Column signs are fixed so
/// the largest-magnitude entry of each basis column is positive.
BasisFit learn_basis(const TrainingSet& train, int basis_count);

struct JointLossTerms {
  double direction = 0.0;  // mean (1 - cos) over 1-DoF joints
  double pivot = 0.0;      // mean pivot distance over revolute joints
  double total = 0.0;      // direction + lambda * pivot
};

JointLossTerms joint_loss_terms(const JointParamSet& pred, const JointParamSet& gt, double lambda,
                                const KinematicTree& tree);

double joint_loss(const JointParamSet& pred, const JointParamSet& gt, double lambda,
                  const KinematicTree& tree);

/// Mean over keypoint pairs of max(0, margin - |p_i - p_j|)^2.
double separation_loss(const Keypoints& keypoints, double margin);

/// Largest pairwise keypoint distance.
double diameter(const Keypoints& keypoints);

struct LossRecord {
  int epoch = 0;
  double direction = 0.0;
  double pivot = 0.0;
  double joint = 0.0;  // direction + lambda * pivot
  double total = 0.0;  // joint + reg_weight * mean |beta|^2
};

struct JointFitResult {
  JointFunctionWeights weights;
  std::vector<LossRecord> history;  // epochs + 1 entries, entry 0 is the initialization
  double beta_regularization = 0.0;
};

/// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
JointFunctionWeights init_joint_function(int input_dim, int hidden, int output_dim,
                                         std::uint64_t seed);

/// Full-batch gradient descent with momentum on the mean joint loss.
/// Throws DivergenceError when the loss turns non-finite.
JointFitResult fit_joint_function(const TrainingSet& train, const std::vector<VecX>& betas,
                                  const LearnConfig& cfg);

struct LearnedPrior {
  OmadPrior prior;
  BasisFit basis_fit;
  JointFitResult joint_fit;
  double separation = 0.0;  // separation loss of the mean shape
  double margin = 0.0;      // margin used for `separation`
};

/// learn_basis followed by fit_joint_function, packaged as a prior whose
/// metadata holds the mean training beta and the mean shape's diameter.
LearnedPrior learn_prior(const TrainingSet& train, const LearnConfig& cfg,
                         const std::string& category_name);

}  // namespace omad
