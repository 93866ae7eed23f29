#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "omad/kinematics.hpp"
#include "omad/omad_model.hpp"

namespace omad {

struct FitInit {
  VecX beta;
  JointStateSet states;
};

struct FitProblem {
  const OmadPrior* prior = nullptr;
  Keypoints targets;
  std::optional<FitInit> init;
};

struct SolverConfig {
  int max_iters = 200;
  double rel_tol = 1e-10;
  double lm_damping_init = 1e-3;
  int restarts = 16;
  std::uint64_t seed = 0;
};

struct FitResult {
  VecX beta;
  JointStateSet states;
  double residual = 0.0;  // RMS keypoint distance
  double energy = 0.0;    // |W(S(beta), J(beta), Theta) - targets|_2
  int iterations = 0;
  bool converged = false;
  int restarts_used = 0;
  bool near_kink = false;
  std::vector<double> energy_trace;  // energy after each accepted step, winning run
};

struct EnergyEval {
  VecX residuals;  // 3M, flattened (model - targets)
  double value = 0.0;
};

EnergyEval energy(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                  const Keypoints& targets);

struct JacobianEval {
  /// (3M) x D with columns [beta (K_b); free rotation, axis-angle applied on
  /// the left of the current rotation (3); free translation (3); 1-DoF joint
  /// states in tree order (K_1dof)].
  MatX jacobian;
  bool near_kink = false;
  double kink_margin = 0.0;
};

constexpr double kKinkTolerance = 1e-9;

int variable_count(const OmadPrior& prior);

JacobianEval energy_jacobian(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                             const Keypoints& targets);

/// Applies a solver step laid out like the Jacobian columns.
void apply_step(const OmadPrior& prior, const VecX& step, VecX& beta, JointStateSet& states);

/// Levenberg-Marquardt minimization of the keypoint energy. Without an
/// explicit init, runs `restarts` seeded starts and keeps the lowest residual.
/// Even starts use an octahedral root rotation at the rest pose; odd starts
/// sample revolute angles and rigidly align the posed template to the targets.
FitResult fit(const FitProblem& problem, const SolverConfig& cfg);

/// The 24 proper rotations that map the coordinate axes onto themselves.
std::vector<Mat3> octahedral_rotations();

/// p_j = (1/N) sum_i s_ij (x_i + o_ij). `offsets[i]` is M x 3; attention is N x M.
Keypoints keypoint_vote(const Keypoints& points, const std::vector<Keypoints>& offsets,
                        const MatX& attention);

/// |S(beta) - S(beta*)|_2 + L_joint(J(beta), J(beta*)).
double loss_beta(const VecX& beta, const VecX& beta_star, const OmadPrior& prior, double lambda);

/// |pred - W(S(beta*), J(beta*), Theta*)|_2.
double loss_kp(const Keypoints& pred, const OmadPrior& prior, const VecX& beta_star,
               const JointStateSet& states_star);

/// Free: (1 - |q.q*|) + RMS(t - t*); revolute/prismatic: squared state difference.
double loss_joint_state(const JointStateSet& pred, const JointStateSet& gt);

}  // namespace omad
