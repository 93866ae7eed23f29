#include "omad/kinematics.hpp"

#include <cmath>
#include <string>

#include "omad/errors.hpp"

namespace omad {

namespace {

constexpr double kUnitTol = 1e-9;

void check_unit(const Vec3& v, const char* what) {
  if (!v.allFinite() || std::abs(v.norm() - 1.0) > kUnitTol) {
    throw ContractViolation(std::string(what) + " must be a unit vector");
  }
}

}  // namespace

JointType type_of(const JointState& state) {
  switch (state.index()) {
    case 0:
      return JointType::Free;
    case 1:
      return JointType::Revolute;
    default:
      return JointType::Prismatic;
  }
}

const char* to_string(JointType type) {
  switch (type) {
    case JointType::Free:
      return "free";
    case JointType::Revolute:
      return "revolute";
    case JointType::Prismatic:
      return "prismatic";
  }
  return "?";
}

KinematicTree::KinematicTree(int part_count, std::vector<Joint> joints,
                             std::vector<int> keypoint_part)
    : part_count_(part_count), joints_(std::move(joints)), keypoint_part_(std::move(keypoint_part)) {
  if (part_count_ <= 0) throw ContractViolation("kinematic tree needs at least one part");
  if (static_cast<int>(joints_.size()) != part_count_) {
    throw ContractViolation("joint count must equal part count (one reference joint per part)");
  }

  reference_joint_.assign(static_cast<std::size_t>(part_count_), -1);
  for (int j = 0; j < joint_count(); ++j) {
    const Joint& jt = joints_[static_cast<std::size_t>(j)];
    if (jt.child < 0 || jt.child >= part_count_) {
      throw ContractViolation("joint " + std::to_string(j) + " has child out of range");
    }
    if (jt.type == JointType::Free) {
      if (free_joint_ >= 0) throw ContractViolation("tree has more than one free joint");
      if (jt.parent != -1) throw ContractViolation("free joint must attach to the world (parent -1)");
      free_joint_ = j;
    } else if (jt.parent < 0 || jt.parent >= part_count_ || jt.parent == jt.child) {
      throw ContractViolation("joint " + std::to_string(j) + " has invalid parent");
    }
    auto& ref = reference_joint_[static_cast<std::size_t>(jt.child)];
    if (ref >= 0) throw ContractViolation("part " + std::to_string(jt.child) + " is a child twice");
    ref = j;
  }
  if (free_joint_ < 0) throw ContractViolation("tree has no free joint");

  // Walk each part up to the root; a walk longer than part_count means a cycle.
  chains_.resize(static_cast<std::size_t>(part_count_));
  for (int p = 0; p < part_count_; ++p) {
    std::vector<int> up;
    int cur = p;
    while (cur >= 0) {
      if (static_cast<int>(up.size()) > part_count_) {
        throw ContractViolation("kinematic tree contains a cycle");
      }
      const int j = reference_joint_[static_cast<std::size_t>(cur)];
      up.push_back(j);
      cur = joints_[static_cast<std::size_t>(j)].parent;
    }
    chains_[static_cast<std::size_t>(p)].assign(up.rbegin(), up.rend());
  }

  dof1_index_.assign(joints_.size(), -1);
  for (int j = 0; j < joint_count(); ++j) {
    if (joints_[static_cast<std::size_t>(j)].type != JointType::Free) {
      dof1_index_[static_cast<std::size_t>(j)] = static_cast<int>(dof1_joints_.size());
      dof1_joints_.push_back(j);
    }
  }

  for (int part : keypoint_part_) {
    if (part < 0 || part >= part_count_) throw ContractViolation("keypoint part id out of range");
  }
}

int KinematicTree::reference_joint(int part) const {
  if (part < 0 || part >= part_count_) throw std::out_of_range("part id out of range");
  return reference_joint_[static_cast<std::size_t>(part)];
}

const std::vector<int>& KinematicTree::chain(int part) const {
  if (part < 0 || part >= part_count_) throw std::out_of_range("part id out of range");
  return chains_[static_cast<std::size_t>(part)];
}

JointStateSet rest_states(const KinematicTree& tree) {
  JointStateSet states;
  states.reserve(tree.joints().size());
  for (const Joint& j : tree.joints()) {
    switch (j.type) {
      case JointType::Free:
        states.emplace_back(FreeState{});
        break;
      case JointType::Revolute:
        states.emplace_back(RevoluteState{});
        break;
      case JointType::Prismatic:
        states.emplace_back(PrismaticState{});
        break;
    }
  }
  return states;
}

void check_states(const KinematicTree& tree, const JointStateSet& states) {
  if (static_cast<int>(states.size()) != tree.joint_count()) {
    throw ContractViolation("joint state count does not match the tree");
  }
  for (int j = 0; j < tree.joint_count(); ++j) {
    if (type_of(states[static_cast<std::size_t>(j)]) != tree.joint(j).type) {
      throw ContractViolation("joint " + std::to_string(j) + " state tag does not match its type");
    }
  }
}

Mat3 axis_rotation(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

Mat4 joint_transform(JointType type, const std::optional<JointParams>& params,
                     const JointState& state) {
  if (type_of(state) != type) throw ContractViolation("joint state tag does not match joint type");
  Mat4 T = Mat4::Identity();
  if (type == JointType::Free) {
    if (params) throw ContractViolation("free joint carries no joint parameters");
    const auto& s = std::get<FreeState>(state);
    if (std::abs(s.rotation.norm() - 1.0) > kUnitTol) {
      throw ContractViolation("free joint rotation must be a unit quaternion");
    }
    T.topLeftCorner<3, 3>() = s.rotation.toRotationMatrix();
    T.topRightCorner<3, 1>() = s.translation;
    return T;
  }

  if (!params) throw ContractViolation("1-DoF joint requires joint parameters");
  check_unit(params->direction, "joint direction");
  if (type == JointType::Revolute) {
    const Mat3 R = axis_rotation(params->direction, std::get<RevoluteState>(state).angle);
    T.topLeftCorner<3, 3>() = R;
    T.topRightCorner<3, 1>() = (Mat3::Identity() - R) * params->pivot;
  } else {
    T.topRightCorner<3, 1>() = std::get<PrismaticState>(state).displacement * params->direction;
  }
  return T;
}

namespace {

void check_inputs(const KinematicTree& tree, const JointParamSet& params,
                  const JointStateSet& states) {
  check_states(tree, states);
  if (static_cast<int>(params.size()) != tree.joint_count()) {
    throw ContractViolation("joint parameter count does not match the tree");
  }
}

}  // namespace

Mat4 part_transform(const KinematicTree& tree, const JointParamSet& params,
                    const JointStateSet& states, int part) {
  if (part < 0 || part >= tree.part_count()) throw std::out_of_range("part id out of range");
  check_inputs(tree, params, states);
  Mat4 G = Mat4::Identity();
  for (int j : tree.chain(part)) {
    const auto idx = static_cast<std::size_t>(j);
    G = G * joint_transform(tree.joint(j).type, params[idx], states[idx]);
  }
  return G;
}

std::vector<Mat4> part_transforms(const KinematicTree& tree, const JointParamSet& params,
                                  const JointStateSet& states) {
  check_inputs(tree, params, states);
  std::vector<Mat4> F(static_cast<std::size_t>(tree.joint_count()));
  for (int j = 0; j < tree.joint_count(); ++j) {
    const auto idx = static_cast<std::size_t>(j);
    F[idx] = joint_transform(tree.joint(j).type, params[idx], states[idx]);
  }
  std::vector<Mat4> G(static_cast<std::size_t>(tree.part_count()), Mat4::Identity());
  for (int p = 0; p < tree.part_count(); ++p) {
    Mat4& g = G[static_cast<std::size_t>(p)];
    for (int j : tree.chain(p)) g = g * F[static_cast<std::size_t>(j)];
  }
  return G;
}

Keypoints deform(const KinematicTree& tree, const Keypoints& canonical,
                 const JointParamSet& params, const JointStateSet& states) {
  if (canonical.rows() != tree.keypoint_count()) {
    throw ContractViolation("keypoint count does not match the tree's keypoint assignment");
  }
  const std::vector<Mat4> G = part_transforms(tree, params, states);
  Keypoints out(canonical.rows(), 3);
  for (Eigen::Index i = 0; i < canonical.rows(); ++i) {
    const Mat4& g = G[static_cast<std::size_t>(tree.keypoint_part()[static_cast<std::size_t>(i)])];
    out.row(i) = (g.topLeftCorner<3, 3>() * canonical.row(i).transpose() + g.topRightCorner<3, 1>())
                     .transpose();
  }
  return out;
}

}  // namespace omad
