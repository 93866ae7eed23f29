#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace omad {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Ordered keypoint set, one keypoint per row (M x 3).
using Keypoints = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

constexpr double kPi = 3.14159265358979323846;

inline double deg_from_rad(double rad) { return rad * 180.0 / kPi; }
inline double rad_from_deg(double deg) { return deg * kPi / 180.0; }

/// Flattens M x 3 keypoints to a 3M vector, x,y,z interleaved per keypoint.
inline VecX flatten(const Keypoints& kp) {
  return Eigen::Map<const VecX>(kp.data(), kp.size());
}

inline Keypoints unflatten(const VecX& v) {
  return Eigen::Map<const Keypoints>(v.data(), v.size() / 3, 3);
}

}  // namespace omad
