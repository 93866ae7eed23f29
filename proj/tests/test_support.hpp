#pragma once

// Shared generators and independent reference implementations for the tests.
// Nothing in here calls into the code paths it is used to check.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "omad/datagen.hpp"
#include "omad/estimator.hpp"
#include "omad/kinematics.hpp"
#include "omad/omad_model.hpp"

namespace omad::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
  return Vec3(uniform(rng, -scale, scale), uniform(rng, -scale, scale), uniform(rng, -scale, scale));
}

inline Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 v(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Quat random_quat(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Quat q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

/// Random tree: part 0 is the root, every other part hangs off an earlier one.
inline KinematicTree random_tree(Rng& rng, int parts, int keypoints_per_part) {
  std::vector<Joint> joints;
  joints.push_back({JointType::Free, -1, 0});
  for (int p = 1; p < parts; ++p) {
    const int parent = std::uniform_int_distribution<int>(0, p - 1)(rng);
    const JointType t = uniform(rng, 0, 1) < 0.6 ? JointType::Revolute : JointType::Prismatic;
    joints.push_back({t, parent, p});
  }
  std::vector<int> kp;
  for (int p = 0; p < parts; ++p) kp.insert(kp.end(), static_cast<std::size_t>(keypoints_per_part), p);
  return KinematicTree(parts, joints, kp);
}

inline JointStateSet random_states(Rng& rng, const KinematicTree& tree) {
  JointStateSet s = rest_states(tree);
  for (int j = 0; j < tree.joint_count(); ++j) {
    switch (tree.joint(j).type) {
      case JointType::Free:
        s[static_cast<std::size_t>(j)] = FreeState{random_quat(rng), random_vec(rng, 2.0)};
        break;
      case JointType::Revolute:
        s[static_cast<std::size_t>(j)] = RevoluteState{uniform(rng, -3.0, 3.0)};
        break;
      case JointType::Prismatic:
        s[static_cast<std::size_t>(j)] = PrismaticState{uniform(rng, -0.5, 0.5)};
        break;
    }
  }
  return s;
}

inline JointParamSet random_params(Rng& rng, const KinematicTree& tree) {
  JointParamSet out(static_cast<std::size_t>(tree.joint_count()));
  for (int j : tree.dof1_joints()) out[static_cast<std::size_t>(j)] = JointParams{random_unit(rng), random_vec(rng)};
  return out;
}

inline Keypoints random_keypoints(Rng& rng, int M, double scale = 1.0) {
  Keypoints kp(M, 3);
  for (int i = 0; i < M; ++i) kp.row(i) = random_vec(rng, scale).transpose();
  return kp;
}

/// Rodrigues' formula written out term by term.
inline Vec3 rodrigues(const Vec3& u, double angle, const Vec3& v) {
  return v * std::cos(angle) + u.cross(v) * std::sin(angle) + u * u.dot(v) * (1.0 - std::cos(angle));
}

/// Applies one joint to a point without building any matrix.
inline Vec3 apply_joint_to_point(JointType type, const std::optional<JointParams>& params,
                                 const JointState& state, const Vec3& p) {
  switch (type) {
    case JointType::Free: {
      const auto& f = std::get<FreeState>(state);
      return f.rotation * p + f.translation;
    }
    case JointType::Revolute:
      return rodrigues(params->direction, std::get<RevoluteState>(state).angle, p - params->pivot) +
             params->pivot;
    case JointType::Prismatic:
      return p + std::get<PrismaticState>(state).displacement * params->direction;
  }
  return p;
}

/// Ancestor path of a part found by following parent links, root first.
inline std::vector<int> path_to_root(const KinematicTree& tree, int part) {
  std::vector<int> up;
  for (int cur = part; cur >= 0;) {
    int ref = -1;
    for (int j = 0; j < tree.joint_count(); ++j) {
      if (tree.joint(j).child == cur) ref = j;
    }
    up.insert(up.begin(), ref);
    cur = tree.joint(ref).parent;
  }
  return up;
}

/// Moves one keypoint by applying its joints innermost first.
inline Vec3 deform_point_oracle(const KinematicTree& tree, const JointParamSet& params,
                                const JointStateSet& states, int part, const Vec3& p) {
  const std::vector<int> path = path_to_root(tree, part);
  Vec3 x = p;
  for (auto it = path.rbegin(); it != path.rend(); ++it) {
    const auto j = static_cast<std::size_t>(*it);
    x = apply_joint_to_point(tree.joint(*it).type, params[j], states[j], x);
  }
  return x;
}

/// Scalar-loop evaluation of the two-layer ReLU network.
inline std::vector<double> mlp_oracle(const JointFunctionWeights& w, const VecX& beta) {
  const auto H = static_cast<std::size_t>(w.W1.rows());
  const auto O = static_cast<std::size_t>(w.W2.rows());
  std::vector<double> hidden(H), out(O);
  for (std::size_t h = 0; h < H; ++h) {
    double s = w.b1(static_cast<Eigen::Index>(h));
    for (Eigen::Index k = 0; k < beta.size(); ++k) s += w.W1(static_cast<Eigen::Index>(h), k) * beta(k);
    hidden[h] = s > 0.0 ? s : 0.0;
  }
  for (std::size_t o = 0; o < O; ++o) {
    double s = w.b2(static_cast<Eigen::Index>(o));
    for (std::size_t h = 0; h < H; ++h) s += w.W2(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(h)) * hidden[h];
    out[o] = s;
  }
  return out;
}

/// Random joint function whose hidden pre-activations stay away from zero
/// for typical inputs is not guaranteed; callers check the kink margin.
inline JointFunctionWeights random_gamma(Rng& rng, int Kb, int H, int outputs) {
  JointFunctionWeights w;
  w.W1 = MatX::NullaryExpr(H, Kb, [&] { return uniform(rng, -1, 1); });
  w.b1 = VecX::NullaryExpr(H, [&] { return uniform(rng, -0.5, 0.5); });
  w.W2 = MatX::NullaryExpr(outputs, H, [&] { return uniform(rng, -0.3, 0.3); });
  w.b2 = VecX::NullaryExpr(outputs, [&] { return uniform(rng, -0.5, 0.5); });
  // Keep directions well away from zero length.
  for (int s = 0; s < outputs / 6; ++s) w.b2.segment<3>(6 * s) += 2.0 * random_unit(rng);
  return w;
}

/// A small random prior on a random tree with a random (non-orthogonal) basis.
inline OmadPrior random_prior(Rng& rng, int parts, int kp_per_part, int Kb, int H) {
  OmadPrior p;
  p.category_name = "random";
  p.tree = random_tree(rng, parts, kp_per_part);
  const int M = p.tree.keypoint_count();
  p.basis.matrix = MatX::NullaryExpr(3 * M, Kb, [&] { return uniform(rng, -1, 1); });
  p.gamma = random_gamma(rng, Kb, H, 6 * p.tree.dof1_count());
  p.rest_states = rest_states(p.tree);
  p.metadata.mean_beta = VecX::Zero(Kb);
  return p;
}

// Flattened model - target residuals from the scalar MLP oracle and the
// per-point deformation oracle.
inline VecX residual_oracle(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                            const Keypoints& targets) {
  const std::vector<double> raw = mlp_oracle(prior.gamma, beta);
  JointParamSet params(static_cast<std::size_t>(prior.tree.joint_count()));
  for (int s = 0; s < prior.tree.dof1_count(); ++s) {
    const Vec3 d(raw[6 * s], raw[6 * s + 1], raw[6 * s + 2]);
    params[static_cast<std::size_t>(prior.tree.dof1_joints()[static_cast<std::size_t>(s)])] =
        JointParams{d / d.norm(), Vec3(raw[6 * s + 3], raw[6 * s + 4], raw[6 * s + 5])};
  }
  VecX r(3 * prior.keypoint_count());
  for (int i = 0; i < prior.keypoint_count(); ++i) {
    Vec3 p = Vec3::Zero();
    for (int k = 0; k < beta.size(); ++k) {
      for (int c = 0; c < 3; ++c) p(c) += prior.basis.matrix(3 * i + c, k) * beta(k);
    }
    const int part = prior.tree.keypoint_part()[static_cast<std::size_t>(i)];
    const Vec3 y = deform_point_oracle(prior.tree, params, states, part, p);
    for (int c = 0; c < 3; ++c) r(3 * i + c) = y(c) - targets(i, c);
  }
  return r;
}

inline double energy_oracle(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                            const Keypoints& targets) {
  return residual_oracle(prior, beta, states, targets).norm();
}

// Moves solver variable `col` by h: beta, left-multiplied root rotation,
// root translation, then 1-DoF states in tree order.
inline void perturb(const OmadPrior& prior, int col, double h, VecX& beta, JointStateSet& states) {
  const int Kb = prior.basis_count();
  auto& free = std::get<FreeState>(states[static_cast<std::size_t>(prior.tree.free_joint())]);
  if (col < Kb) {
    beta(col) += h;
  } else if (col < Kb + 3) {
    free.rotation = Quat(Eigen::AngleAxisd(h, Vec3::Unit(col - Kb))) * free.rotation;
  } else if (col < Kb + 6) {
    free.translation(col - Kb - 3) += h;
  } else {
    const int j = prior.tree.dof1_joints()[static_cast<std::size_t>(col - Kb - 6)];
    JointState& s = states[static_cast<std::size_t>(j)];
    if (auto* r = std::get_if<RevoluteState>(&s)) r->angle += h;
    if (auto* p = std::get_if<PrismaticState>(&s)) p->displacement += h;
  }
}

inline MatX finite_difference_jacobian(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                                       const Keypoints& targets, double h) {
  const int D = prior.basis_count() + 6 + prior.tree.dof1_count();
  MatX J(3 * prior.keypoint_count(), D);
  for (int c = 0; c < D; ++c) {
    VecX bp = beta, bm = beta;
    JointStateSet sp = states, sm = states;
    perturb(prior, c, h, bp, sp);
    perturb(prior, c, -h, bm, sm);
    J.col(c) = (residual_oracle(prior, bp, sp, targets) - residual_oracle(prior, bm, sm, targets)) / (2 * h);
  }
  return J;
}

// Entrywise |a - f| / max(|f|, 1e-3): relative for entries of meaningful
// size, absolute below that.
inline double max_relative_deviation(const MatX& analytic, const MatX& fd) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < fd.size(); ++i) {
    const double denom = std::max(std::abs(fd.data()[i]), 1e-3);
    worst = std::max(worst, std::abs(analytic.data()[i] - fd.data()[i]) / denom);
  }
  return worst;
}

}  // namespace omad::testing
