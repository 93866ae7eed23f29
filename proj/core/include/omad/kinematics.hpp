#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "omad/types.hpp"

namespace omad {

enum class JointType { Free, Revolute, Prismatic };

/// Canonical-space axis geometry of a 1-DoF joint. `pivot` only matters for
/// revolute joints.
struct JointParams {
  Vec3 direction = Vec3::UnitZ();
  Vec3 pivot = Vec3::Zero();
};

struct FreeState {
  Quat rotation = Quat::Identity();
  Vec3 translation = Vec3::Zero();
};

struct RevoluteState {
  double angle = 0.0;
};

struct PrismaticState {
  double displacement = 0.0;
};

using JointState = std::variant<FreeState, RevoluteState, PrismaticState>;

/// Per-joint parameters indexed by joint id; the free joint's slot is empty.
using JointParamSet = std::vector<std::optional<JointParams>>;
using JointStateSet = std::vector<JointState>;

JointType type_of(const JointState& state);
const char* to_string(JointType type);

struct Joint {
  JointType type = JointType::Free;
  int parent = -1;  // -1 is the world, only valid for the free joint
  int child = 0;
};

/// Rooted part tree. Every part is the child of exactly one joint (its
/// reference joint); the free joint attaches the root part to the world.
class KinematicTree {
 public:
  KinematicTree() = default;
  KinematicTree(int part_count, std::vector<Joint> joints, std::vector<int> keypoint_part);

  int part_count() const { return part_count_; }
  int joint_count() const { return static_cast<int>(joints_.size()); }
  int keypoint_count() const { return static_cast<int>(keypoint_part_.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(int id) const { return joints_.at(static_cast<std::size_t>(id)); }
  const std::vector<int>& keypoint_part() const { return keypoint_part_; }

  int free_joint() const { return free_joint_; }
  int root_part() const { return joints_[static_cast<std::size_t>(free_joint_)].child; }
  int reference_joint(int part) const;

  /// Joint ids from the free joint down to `part`'s reference joint.
  const std::vector<int>& chain(int part) const;

  /// Number of revolute + prismatic joints.
  int dof1_count() const { return static_cast<int>(dof1_joints_.size()); }
  /// Joint ids of the 1-DoF joints in tree order; position in this list is
  /// the joint's slot in the joint-function output and in the solver vector.
  const std::vector<int>& dof1_joints() const { return dof1_joints_; }
  /// Slot of a 1-DoF joint in dof1_joints(), -1 for the free joint.
  int dof1_index(int joint_id) const { return dof1_index_.at(static_cast<std::size_t>(joint_id)); }

 private:
  int part_count_ = 0;
  std::vector<Joint> joints_;
  std::vector<int> keypoint_part_;
  int free_joint_ = -1;
  std::vector<int> reference_joint_;
  std::vector<std::vector<int>> chains_;
  std::vector<int> dof1_joints_;
  std::vector<int> dof1_index_;
};

/// Zero angles/displacements and identity free pose.
JointStateSet rest_states(const KinematicTree& tree);

/// Throws ContractViolation when any state tag disagrees with its joint type.
void check_states(const KinematicTree& tree, const JointStateSet& states);

/// Rigid motion contributed by a single joint.
///   Free      -> [R(q) | t]
///   Revolute  -> rotation by angle about `direction` through `pivot`
///   Prismatic -> translation by displacement * direction
Mat4 joint_transform(JointType type, const std::optional<JointParams>& params,
                     const JointState& state);

/// G_k: product of joint transforms along the chain to `part`, free joint leftmost.
Mat4 part_transform(const KinematicTree& tree, const JointParamSet& params,
                    const JointStateSet& states, int part);

/// Transforms for every part at once.
std::vector<Mat4> part_transforms(const KinematicTree& tree, const JointParamSet& params,
                                  const JointStateSet& states);

/// Maps canonical keypoints to camera space, each through its part transform.
Keypoints deform(const KinematicTree& tree, const Keypoints& canonical,
                 const JointParamSet& params, const JointStateSet& states);

/// Rodrigues rotation about a unit axis.
Mat3 axis_rotation(const Vec3& axis, double angle);

}  // namespace omad
