#include "omad/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omad/errors.hpp"

namespace omad {

double joint_state_error(const std::optional<JointState>& pred, const JointState& gt) {
  if (const auto* g = std::get_if<RevoluteState>(&gt)) {
    if (!pred) return kMissingRevolutePenaltyDeg;
    const auto* p = std::get_if<RevoluteState>(&*pred);
    if (!p) throw ContractViolation("predicted state type does not match a revolute ground truth");
    return deg_from_rad(std::abs(p->angle - g->angle));
  }
  if (const auto* g = std::get_if<PrismaticState>(&gt)) {
    if (!pred) return kMissingPrismaticPenalty;
    const auto* p = std::get_if<PrismaticState>(&*pred);
    if (!p) throw ContractViolation("predicted state type does not match a prismatic ground truth");
    return std::abs(p->displacement - g->displacement);
  }
  throw ContractViolation("joint state error is defined for revolute and prismatic joints only");
}

double joint_axis_angle_error(const JointAxisLine& pred, const JointAxisLine& gt) {
  const double c = std::clamp(pred.direction.dot(gt.direction), -1.0, 1.0);
  return deg_from_rad(std::acos(c));
}

double joint_axis_distance_error(const JointAxisLine& pred, const JointAxisLine& gt) {
  const Vec3 w = gt.point - pred.point;
  const Vec3 n = pred.direction.cross(gt.direction);
  const double sin = n.norm();
  if (sin > 1e-12) return std::abs(w.dot(n)) / sin;
  // Parallel: distance from gt.point to the predicted line.
  return (w - w.dot(pred.direction) * pred.direction).norm();
}

double average_precision(const RetrievalRecord& query, int top_k) {
  if (top_k < 1) throw ContractViolation("top_k must be at least 1");
  if (query.database.empty()) throw ContractViolation("retrieval database is empty");
  std::vector<double> dist(query.database.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const VecX& b = query.database[i].beta;
    if (b.size() != query.query_beta.size()) {
      throw ContractViolation("retrieval shape parameters differ in length");
    }
    dist[i] = (b - query.query_beta).norm();
  }
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&dist](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  const std::size_t k = std::min(order.size(), static_cast<std::size_t>(top_k));
  double sum = 0.0;
  int hits = 0;
  for (std::size_t r = 0; r < k; ++r) {
    if (query.database[order[r]].label == query.query_label) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return hits == 0 ? 0.0 : sum / hits;
}

double retrieval_map(const std::vector<RetrievalRecord>& queries, int top_k) {
  if (queries.empty()) throw ContractViolation("retrieval needs at least one query");
  double sum = 0.0;
  for (const auto& q : queries) sum += average_precision(q, top_k);
  return sum / static_cast<double>(queries.size());
}

JointAxisLine axis_to_camera(const OmadPrior& prior, const VecX& beta, const JointStateSet& states,
                             int joint_id) {
  const KinematicTree& tree = prior.tree;
  if (joint_id < 0 || joint_id >= tree.joint_count()) throw std::out_of_range("joint id out of range");
  const Joint& jt = tree.joint(joint_id);
  if (jt.type == JointType::Free) throw ContractViolation("the free joint has no axis");
  const JointParamSet params = joint_apply(prior.gamma, beta, tree);
  const Mat4 G = part_transform(tree, params, states, jt.parent);
  const JointParams& jp = *params[static_cast<std::size_t>(joint_id)];
  JointAxisLine line;
  line.direction = (G.topLeftCorner<3, 3>() * jp.direction).normalized();
  line.point = G.topLeftCorner<3, 3>() * jp.pivot + G.topRightCorner<3, 1>();
  return line;
}

}  // namespace omad
