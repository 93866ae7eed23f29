#include "omad/estimator.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <type_traits>

#include "omad/errors.hpp"
#include "omad/prior_learning.hpp"

namespace omad {

namespace {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

void check_problem_dims(const OmadPrior& prior, const VecX& beta, const Keypoints& targets) {
  if (beta.size() != prior.basis_count()) {
    throw ContractViolation("shape parameter length does not match the prior");
  }
  if (targets.rows() != prior.keypoint_count()) {
    throw ContractViolation("target keypoint count does not match the prior");
  }
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  return a <= -kPi ? a + 2.0 * kPi : a;
}

}  // namespace

int variable_count(const OmadPrior& prior) {
  return prior.basis_count() + 6 + prior.tree.dof1_count();
}

EnergyEval energy(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                  const Keypoints& targets) {
  check_problem_dims(prior, beta, targets);
  const Keypoints canonical = shape_apply(prior.basis, beta);
  const JointParamSet params = joint_apply(prior.gamma, beta, prior.tree);
  const Keypoints model = deform(prior.tree, canonical, params, states);
  EnergyEval e;
  e.residuals = flatten(model) - flatten(targets);
  e.value = e.residuals.norm();
  return e;
}

JacobianEval energy_jacobian(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                             const Keypoints& targets) {
  check_problem_dims(prior, beta, targets);
  const KinematicTree& tree = prior.tree;
  check_states(tree, states);

  const int Kb = prior.basis_count();
  const int col_rot = Kb;
  const int col_trans = Kb + 3;
  const int col_theta = Kb + 6;
  const int M = prior.keypoint_count();

  const JointFunctionEval net = joint_forward(prior.gamma, beta);
  const JointParamSet params = joint_params_from_raw(net.raw, tree);
  const Keypoints canonical = shape_apply(prior.basis, beta);

  // d raw / d beta under the current ReLU active set.
  const VecX mask = (net.pre.array() > 0.0).cast<double>();
  const MatX draw_dbeta = prior.gamma.W2 * mask.asDiagonal() * prior.gamma.W1;

  std::vector<Mat4> F(static_cast<std::size_t>(tree.joint_count()));
  for (int j = 0; j < tree.joint_count(); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    F[idx] = joint_transform(tree.joint(j).type, params[idx], states[idx]);
  }

  JacobianEval out;
  out.kink_margin = kink_margin(net);
  out.near_kink = out.kink_margin < kKinkTolerance;
  out.jacobian = MatX::Zero(3 * M, variable_count(prior));
  MatX& J = out.jacobian;

  std::vector<Mat4> prefix;
  std::vector<Eigen::Vector4d> suffix;
  MatX draw_block(3, 6 * tree.dof1_count());
  for (int i = 0; i < M; ++i) {
    const int part = tree.keypoint_part()[static_cast<std::size_t>(i)];
    const std::vector<int>& chain = tree.chain(part);
    const std::size_t n = chain.size();

    // prefix[m] = F_0 ... F_{m-1}; suffix[m] = F_{m+1} ... F_{n-1} p'
    prefix.assign(n + 1, Mat4::Identity());
    for (std::size_t m = 0; m < n; ++m) {
      prefix[m + 1] = prefix[m] * F[static_cast<std::size_t>(chain[m])];
    }
    suffix.assign(n, Eigen::Vector4d::Zero());
    Eigen::Vector4d p;
    p << canonical.row(i).transpose(), 1.0;
    suffix[n - 1] = p;
    for (std::size_t m = n - 1; m > 0; --m) {
      suffix[m - 1] = F[static_cast<std::size_t>(chain[m])] * suffix[m];
    }

    const auto rows = 3 * i;
    const Mat3 Rk = prefix[n].topLeftCorner<3, 3>();

    // Shape path: p' = B_i beta.
    J.block(rows, 0, 3, Kb) += Rk * prior.basis.matrix.middleRows(rows, 3);

    // Free joint (always chain[0]).
    const Mat3 R0 = F[static_cast<std::size_t>(chain[0])].topLeftCorner<3, 3>();
    J.block<3, 3>(rows, col_rot) = -skew(R0 * suffix[0].head<3>());
    J.block<3, 3>(rows, col_trans) = Mat3::Identity();

    draw_block.setZero();
    for (std::size_t m = 1; m < n; ++m) {
      const int j = chain[m];
      const int slot = tree.dof1_index(j);
      const JointParams& jp = *params[static_cast<std::size_t>(j)];
      const Mat3 A = prefix[m].topLeftCorner<3, 3>();
      const Vec3 a = suffix[m].head<3>();
      const Vec3 d = net.raw.segment<3>(6 * slot);
      const Mat3 dnorm = (Mat3::Identity() - jp.direction * jp.direction.transpose()) / d.norm();

      if (tree.joint(j).type == JointType::Revolute) {
        const double theta = std::get<RevoluteState>(states[static_cast<std::size_t>(j)]).angle;
        const Mat3 R = F[static_cast<std::size_t>(j)].topLeftCorner<3, 3>();
        const Vec3 b = R * (a - jp.pivot) + jp.pivot;
        J.block<3, 1>(rows, col_theta + slot) = A * jp.direction.cross(b - jp.pivot);

        const Vec3 v = a - jp.pivot;
        const Mat3 d_dir = -std::sin(theta) * skew(v) +
                           (1.0 - std::cos(theta)) * (jp.direction * v.transpose() +
                                                      jp.direction.dot(v) * Mat3::Identity());
        draw_block.middleCols<3>(6 * slot) += A * d_dir * dnorm;
        draw_block.middleCols<3>(6 * slot + 3) += A * (Mat3::Identity() - R);
      } else {
        const double disp = std::get<PrismaticState>(states[static_cast<std::size_t>(j)]).displacement;
        J.block<3, 1>(rows, col_theta + slot) = A * jp.direction;
        draw_block.middleCols<3>(6 * slot) += disp * A * dnorm;
      }
    }
    if (n > 1) J.block(rows, 0, 3, Kb) += draw_block * draw_dbeta;
  }
  return out;
}

void apply_step(const OmadPrior& prior, const VecX& step, VecX& beta, JointStateSet& states) {
  const KinematicTree& tree = prior.tree;
  const int Kb = prior.basis_count();
  if (step.size() != variable_count(prior)) throw ContractViolation("solver step has wrong size");
  beta += step.head(Kb);

  auto& free = std::get<FreeState>(states[static_cast<std::size_t>(tree.free_joint())]);
  const Vec3 w = step.segment<3>(Kb);
  const double angle = w.norm();
  if (angle > 0.0) {
    free.rotation = (Quat(Eigen::AngleAxisd(angle, w / angle)) * free.rotation).normalized();
  }
  free.translation += step.segment<3>(Kb + 3);

  for (int slot = 0; slot < tree.dof1_count(); ++slot) {
    const int j = tree.dof1_joints()[static_cast<std::size_t>(slot)];
    const double delta = step(Kb + 6 + slot);
    std::visit(
        [delta](auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, RevoluteState>) s.angle += delta;
          if constexpr (std::is_same_v<T, PrismaticState>) s.displacement += delta;
        },
        states[static_cast<std::size_t>(j)]);
  }
}

std::vector<Mat3> octahedral_rotations() {
  std::vector<Mat3> out;
  std::array<int, 3> perm{0, 1, 2};
  do {
    for (int signs = 0; signs < 8; ++signs) {
      Mat3 R = Mat3::Zero();
      for (int r = 0; r < 3; ++r) {
        R(r, perm[static_cast<std::size_t>(r)]) = (signs >> r) & 1 ? -1.0 : 1.0;
      }
      if (R.determinant() > 0.0) out.push_back(R);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return out;
}

namespace {

struct RunResult {
  VecX beta;
  JointStateSet states;
  double energy = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool near_kink = false;
  std::vector<double> trace;
};

double safe_energy(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                   const Keypoints& targets) {
  try {
    const double e = energy(prior, beta, states, targets).value;
    return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
  } catch (const DegenerateDirection&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Rigidly aligns the posed template to the targets and writes the result
// into the free joint. Leaves the start untouched if the template is degenerate.
void align_root(const OmadPrior& prior, const Keypoints& targets, FitInit& start) {
  const KinematicTree& tree = prior.tree;
  JointStateSet local = start.states;
  local[static_cast<std::size_t>(tree.free_joint())] = FreeState{};
  Keypoints posed;
  try {
    posed = deform(tree, shape_apply(prior.basis, start.beta),
                   joint_apply(prior.gamma, start.beta, tree), local);
  } catch (const DegenerateDirection&) {
    return;
  }
  const Mat4 T = Eigen::umeyama(posed.transpose(), targets.transpose(), false);
  if (!T.allFinite()) return;
  auto& free = std::get<FreeState>(start.states[static_cast<std::size_t>(tree.free_joint())]);
  free.rotation = Quat(Mat3(T.topLeftCorner<3, 3>())).normalized();
  free.translation = T.topRightCorner<3, 1>();
}

RunResult levenberg_marquardt(const OmadPrior& prior, const Keypoints& targets, VecX beta,
                              JointStateSet states, const SolverConfig& cfg) {
  RunResult run;
  run.beta = beta;
  run.states = states;
  run.energy = safe_energy(prior, beta, states, targets);
  if (!std::isfinite(run.energy)) return run;
  run.trace.push_back(run.energy);

  const double floor = 1e-14 * std::max(1.0, flatten(targets).norm());
  double damping = cfg.lm_damping_init;
  while (run.iterations < cfg.max_iters) {
    if (run.energy <= floor) {
      run.converged = true;
      break;
    }
    const JacobianEval jac = energy_jacobian(prior, run.beta, run.states, targets);
    run.near_kink = jac.near_kink;
    const VecX r = energy(prior, run.beta, run.states, targets).residuals;
    const MatX JtJ = jac.jacobian.transpose() * jac.jacobian;
    const VecX g = jac.jacobian.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, run.energy)) {
      run.converged = true;
      break;
    }
    const VecX diag = JtJ.diagonal().cwiseMax(1e-12);

    ++run.iterations;
    MatX A = JtJ;
    A.diagonal() += damping * diag;
    const VecX step = A.ldlt().solve(-g);

    VecX cand_beta = run.beta;
    JointStateSet cand_states = run.states;
    double cand = std::numeric_limits<double>::infinity();
    if (step.allFinite()) {
      apply_step(prior, step, cand_beta, cand_states);
      cand = safe_energy(prior, cand_beta, cand_states, targets);
    }

    if (cand < run.energy) {
      const double rel = (run.energy - cand) / run.energy;
      run.beta = std::move(cand_beta);
      run.states = std::move(cand_states);
      run.energy = cand;
      run.trace.push_back(cand);
      damping = std::max(damping / 10.0, 1e-15);
      if (rel < cfg.rel_tol) {
        run.converged = true;
        break;
      }
    } else {
      damping *= 10.0;
      if (damping > 1e16) break;
    }
  }
  return run;
}

}  // namespace

FitResult fit(const FitProblem& problem, const SolverConfig& cfg) {
  if (problem.prior == nullptr) throw ContractViolation("fit problem has no prior");
  const OmadPrior& prior = *problem.prior;
  const KinematicTree& tree = prior.tree;
  if (problem.targets.rows() != prior.keypoint_count()) {
    throw ContractViolation("target keypoint count does not match the prior");
  }
  if (!problem.targets.allFinite()) throw ContractViolation("targets must be finite");
  if (!(cfg.rel_tol > 0.0) || !(cfg.lm_damping_init > 0.0) || cfg.max_iters < 0) {
    throw ContractViolation("solver tolerances must be positive");
  }

  std::vector<FitInit> starts;
  if (problem.init) {
    check_states(tree, problem.init->states);
    if (problem.init->beta.size() != prior.basis_count()) {
      throw ContractViolation("init shape parameters have the wrong length");
    }
    starts.push_back(*problem.init);
  } else {
    if (cfg.restarts < 1) throw ContractViolation("at least one restart is required");
    std::vector<Mat3> rotations = octahedral_rotations();
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(rotations.begin(), rotations.end(), rng);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const VecX mean_beta = prior.metadata.mean_beta.size() == prior.basis_count()
                               ? prior.metadata.mean_beta
                               : VecX::Zero(prior.basis_count());
    const Vec3 centroid = problem.targets.colwise().mean().transpose();
    // Latin hypercube over revolute angles for the aligned starts after the first.
    const int sampled = std::max(0, (cfg.restarts - 2) / 2);
    std::vector<std::vector<double>> strata(static_cast<std::size_t>(tree.joint_count()));
    for (int j : tree.dof1_joints()) {
      if (tree.joint(j).type != JointType::Revolute) continue;
      auto& column = strata[static_cast<std::size_t>(j)];
      for (int k = 0; k < sampled; ++k) {
        column.push_back(-kPi + 2.0 * kPi * (k + unit(rng)) / sampled);
      }
      std::shuffle(column.begin(), column.end(), rng);
    }
    for (int r = 0; r < cfg.restarts; ++r) {
      FitInit s;
      s.beta = (r / 2) % 2 == 0 ? mean_beta : VecX::Zero(prior.basis_count());
      s.states = rest_states(tree);
      auto& free = std::get<FreeState>(s.states[static_cast<std::size_t>(tree.free_joint())]);
      free.rotation = Quat(rotations[static_cast<std::size_t>(r / 2) % rotations.size()]);
      free.translation = centroid;
      if (r % 2 == 1) {
        if (r > 1) {
          const auto k = static_cast<std::size_t>(r / 2 - 1);
          for (std::size_t j = 0; j < s.states.size(); ++j) {
            if (auto* rev = std::get_if<RevoluteState>(&s.states[j])) rev->angle = strata[j][k];
          }
        }
        align_root(prior, problem.targets, s);
      }
      starts.push_back(std::move(s));
    }
  }

  RunResult best;
  for (const FitInit& s : starts) {
    RunResult run = levenberg_marquardt(prior, problem.targets, s.beta, s.states, cfg);
    if (run.energy < best.energy) best = std::move(run);
  }
  if (!std::isfinite(best.energy)) {
    throw OptimizationFailure("all " + std::to_string(starts.size()) +
                              " estimator starts produced non-finite energy");
  }

  for (JointState& s : best.states) {
    if (auto* rev = std::get_if<RevoluteState>(&s)) rev->angle = wrap_angle(rev->angle);
  }

  FitResult out;
  out.beta = std::move(best.beta);
  out.states = std::move(best.states);
  out.energy = best.energy;
  out.residual = best.energy / std::sqrt(static_cast<double>(prior.keypoint_count()));
  out.iterations = best.iterations;
  out.converged = best.converged;
  out.restarts_used = static_cast<int>(starts.size());
  out.near_kink = best.near_kink;
  out.energy_trace = std::move(best.trace);
  return out;
}

Keypoints keypoint_vote(const Keypoints& points, const std::vector<Keypoints>& offsets,
                        const MatX& attention) {
  const Eigen::Index N = points.rows();
  if (static_cast<Eigen::Index>(offsets.size()) != N || attention.rows() != N) {
    throw ContractViolation("vote inputs disagree on the point count");
  }
  if (N == 0) throw ContractViolation("keypoint vote needs at least one point");
  const Eigen::Index M = attention.cols();
  if ((attention.array() < 0.0).any() || (attention.array() > 1.0).any()) {
    throw ContractViolation("attention scores must lie in [0, 1]");
  }
  Keypoints out = Keypoints::Zero(M, 3);
  for (Eigen::Index i = 0; i < N; ++i) {
    const Keypoints& o = offsets[static_cast<std::size_t>(i)];
    if (o.rows() != M) throw ContractViolation("offset block has the wrong keypoint count");
    for (Eigen::Index j = 0; j < M; ++j) {
      out.row(j) += attention(i, j) * (points.row(i) + o.row(j));
    }
  }
  return out / static_cast<double>(N);
}

double loss_beta(const VecX& beta, const VecX& beta_star, const OmadPrior& prior, double lambda) {
  const double shape =
      (shape_apply(prior.basis, beta) - shape_apply(prior.basis, beta_star)).norm();
  const JointParamSet pred = joint_apply(prior.gamma, beta, prior.tree);
  const JointParamSet gt = joint_apply(prior.gamma, beta_star, prior.tree);
  return shape + joint_loss(pred, gt, lambda, prior.tree);
}

double loss_kp(const Keypoints& pred, const OmadPrior& prior, const VecX& beta_star,
               const JointStateSet& states_star) {
  return energy(prior, beta_star, states_star, pred).value;
}

double loss_joint_state(const JointStateSet& pred, const JointStateSet& gt) {
  if (pred.size() != gt.size()) throw ContractViolation("joint state sets differ in length");
  double total = 0.0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (pred[j].index() != gt[j].index()) {
      throw ContractViolation("joint " + std::to_string(j) + " state types differ");
    }
    if (const auto* p = std::get_if<FreeState>(&pred[j])) {
      const auto& g = std::get<FreeState>(gt[j]);
      total += 1.0 - std::abs(p->rotation.coeffs().dot(g.rotation.coeffs()));
      total += std::sqrt((p->translation - g.translation).squaredNorm() / 3.0);
    } else if (const auto* r = std::get_if<RevoluteState>(&pred[j])) {
      const double d = r->angle - std::get<RevoluteState>(gt[j]).angle;
      total += d * d;
    } else {
      const double d = std::get<PrismaticState>(pred[j]).displacement -
                       std::get<PrismaticState>(gt[j]).displacement;
      total += d * d;
    }
  }
  return total;
}

}  // namespace omad
