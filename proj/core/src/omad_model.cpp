#include "omad/omad_model.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "omad/errors.hpp"

namespace omad {

void OmadPrior::validate() const {
  if (basis.matrix.rows() % 3 != 0) throw ContractViolation("basis row count must be 3M");
  if (keypoint_count() != tree.keypoint_count()) {
    throw ContractViolation("basis keypoint count does not match the tree");
  }
  if (!basis.matrix.allFinite()) throw ContractViolation("basis has non-finite entries");
  if (gamma.input_dim() != basis_count()) {
    throw ContractViolation("joint function input width must equal the basis count");
  }
  if (gamma.output_dim() != 6 * tree.dof1_count()) {
    throw ContractViolation("joint function output width must be 6 per 1-DoF joint");
  }
  if (gamma.b1.size() != gamma.hidden_dim() || gamma.W2.cols() != gamma.hidden_dim() ||
      gamma.b2.size() != gamma.output_dim()) {
    throw ContractViolation("joint function weight shapes are inconsistent");
  }
  if (!gamma.W1.allFinite() || !gamma.b1.allFinite() || !gamma.W2.allFinite() ||
      !gamma.b2.allFinite()) {
    throw ContractViolation("joint function has non-finite weights");
  }
  check_states(tree, rest_states);
  for (const JointState& s : rest_states) {
    bool at_rest = std::visit(
        [](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, FreeState>) {
            return v.rotation.coeffs() == Quat::Identity().coeffs() && v.translation.isZero(0.0);
          } else if constexpr (std::is_same_v<T, RevoluteState>) {
            return v.angle == 0.0;
          } else {
            return v.displacement == 0.0;
          }
        },
        s);
    if (!at_rest) throw ContractViolation("rest states must be zero with an identity free joint");
  }
  if (metadata.mean_beta.size() != 0 && metadata.mean_beta.size() != basis_count()) {
    throw ContractViolation("metadata mean_beta has the wrong length");
  }
}

Keypoints shape_apply(const ShapeBasis& basis, const VecX& beta) {
  if (beta.size() != basis.basis_count()) {
    throw ContractViolation("shape parameter length " + std::to_string(beta.size()) +
                            " does not match basis count " +
                            std::to_string(basis.basis_count()));
  }
  return unflatten(basis.matrix * beta);
}

JointFunctionEval joint_forward(const JointFunctionWeights& gamma, const VecX& beta) {
  if (beta.size() != gamma.input_dim()) {
    throw ContractViolation("shape parameter length does not match joint function input");
  }
  JointFunctionEval e;
  e.pre = gamma.W1 * beta + gamma.b1;
  e.hidden = e.pre.cwiseMax(0.0);
  e.raw = gamma.W2 * e.hidden + gamma.b2;
  return e;
}

JointParamSet joint_params_from_raw(const VecX& raw, const KinematicTree& tree) {
  if (raw.size() != 6 * tree.dof1_count()) {
    throw ContractViolation("joint function output does not match the tree's 1-DoF joints");
  }
  JointParamSet out(static_cast<std::size_t>(tree.joint_count()));
  for (int slot = 0; slot < tree.dof1_count(); ++slot) {
    const Vec3 d = raw.segment<3>(6 * slot);
    const double n = d.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw DegenerateDirection("joint function produced a zero-length direction for joint " +
                                std::to_string(tree.dof1_joints()[static_cast<std::size_t>(slot)]));
    }
    JointParams p;
    p.direction = d / n;
    p.pivot = raw.segment<3>(6 * slot + 3);
    out[static_cast<std::size_t>(tree.dof1_joints()[static_cast<std::size_t>(slot)])] = p;
  }
  return out;
}

JointParamSet joint_apply(const JointFunctionWeights& gamma, const VecX& beta,
                          const KinematicTree& tree) {
  if (gamma.output_dim() != 6 * tree.dof1_count()) {
    throw ContractViolation("joint function output width must be 6 per 1-DoF joint");
  }
  return joint_params_from_raw(joint_forward(gamma, beta).raw, tree);
}

double kink_margin(const JointFunctionEval& eval) {
  if (eval.pre.size() == 0) return std::numeric_limits<double>::infinity();
  return eval.pre.cwiseAbs().minCoeff();
}

}  // namespace omad
