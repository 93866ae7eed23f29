#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omad/kinematics.hpp"
#include "omad/omad_model.hpp"

namespace omad {

/// Infinite line through `point` along unit `direction`.
struct JointAxisLine {
  Vec3 direction = Vec3::UnitZ();
  Vec3 point = Vec3::Zero();
};

/// Penalties charged when a prediction lacks a joint.
constexpr double kMissingRevolutePenaltyDeg = 90.0;
constexpr double kMissingPrismaticPenalty = 1.0;

/// |pred - gt| in degrees for revolute joints, length units for prismatic.
double joint_state_error(const std::optional<JointState>& pred, const JointState& gt);

/// Angle between directions in degrees, range [0, 180]; antiparallel axes
/// count as 180.
double joint_axis_angle_error(const JointAxisLine& pred, const JointAxisLine& gt);

/// Minimum distance between two infinite lines.
double joint_axis_distance_error(const JointAxisLine& pred, const JointAxisLine& gt);

struct RetrievalItem {
  VecX beta;
  std::string label;
};

struct RetrievalRecord {
  VecX query_beta;
  std::string query_label;
  std::vector<RetrievalItem> database;
};

/// Average precision of the top_k database items ranked by Euclidean beta
/// distance (ties keep database order). Zero when nothing relevant is found.
double average_precision(const RetrievalRecord& query, int top_k);

double retrieval_map(const std::vector<RetrievalRecord>& queries, int top_k);

/// Camera-space axis of a 1-DoF joint: its canonical axis carried by the
/// parent part's transform.
JointAxisLine axis_to_camera(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                             int joint_id);

}  // namespace omad
