#pragma once

#include <string>

#include "omad/kinematics.hpp"
#include "omad/types.hpp"

namespace omad {

/// Linear shape basis, 3M x K_b. Column i is basis shape b_i flattened with
/// x,y,z interleaved per keypoint.
struct ShapeBasis {
  MatX matrix;

  int keypoint_count() const { return static_cast<int>(matrix.rows() / 3); }
  int basis_count() const { return static_cast<int>(matrix.cols()); }
};

/// Two-layer ReLU network mapping shape parameters to joint parameters.
///   raw = W2 * relu(W1 * beta + b1) + b2
/// Each 1-DoF joint owns six consecutive outputs: direction (3), pivot (3).
struct JointFunctionWeights {
  MatX W1;  // H x K_b
  VecX b1;  // H
  MatX W2;  // 6*K_1dof x H
  VecX b2;  // 6*K_1dof

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int hidden_dim() const { return static_cast<int>(W1.rows()); }
  int output_dim() const { return static_cast<int>(W2.rows()); }
};

/// Forward pass with the intermediate activations kept for differentiation.
struct JointFunctionEval {
  VecX pre;     // W1 * beta + b1
  VecX hidden;  // relu(pre)
  VecX raw;     // network output
};

struct PriorMetadata {
  VecX mean_beta;
  double data_diameter = 0.0;
};

/// Frozen category prior: topology, shape basis and joint function.
struct OmadPrior {
  std::string category_name;
  KinematicTree tree;
  ShapeBasis basis;
  JointFunctionWeights gamma;
  JointStateSet rest_states;
  PriorMetadata metadata;

  int keypoint_count() const { return basis.keypoint_count(); }
  int basis_count() const { return basis.basis_count(); }

  /// Throws ContractViolation when dimensions or rest states are inconsistent.
  void validate() const;
};

/// P' = B * beta, reshaped to M x 3.
Keypoints shape_apply(const ShapeBasis& basis, const VecX& beta);

JointFunctionEval joint_forward(const JointFunctionWeights& gamma, const VecX& beta);

/// Phi' = J(beta; Gamma). Directions are normalized here; a zero-length raw
/// direction throws DegenerateDirection.
JointParamSet joint_apply(const JointFunctionWeights& gamma, const VecX& beta,
                          const KinematicTree& tree);

/// Converts a raw network output into per-joint parameters.
JointParamSet joint_params_from_raw(const VecX& raw, const KinematicTree& tree);

/// Smallest |pre-activation|; ReLU is non-differentiable where this is 0.
double kink_margin(const JointFunctionEval& eval);

}  // namespace omad
