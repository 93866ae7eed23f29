#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "omad/omad_model.hpp"
#include "omad/prior_learning.hpp"

namespace omad {

/// Box-part stand-ins for five articulated categories.
enum class CategoryTemplate {
  Hinge2,   // 2 parts, 1 revolute (laptop-like)
  Hinge3,   // 3 parts, 2 revolute (eyeglasses-like)
  Door2,    // 2 parts, 1 revolute (dishwasher-like)
  Pivot2,   // 2 parts, 1 revolute (scissors-like)
  Slider4,  // 4 parts, 3 prismatic (drawer-like)
};

const char* to_string(CategoryTemplate t);
std::optional<CategoryTemplate> parse_category(const std::string& name);
std::vector<CategoryTemplate> all_categories();

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct CategorySpec {
  CategoryTemplate category = CategoryTemplate::Hinge2;
  int keypoints_per_part = 4;  // 1..8 box corners per part
  int basis_count_true = 3;
  /// One interval per template size parameter; empty selects the defaults.
  std::vector<Interval> size_ranges;
};

/// Names and default ranges of a template's size parameters.
std::vector<std::pair<std::string, Interval>> default_size_ranges(CategoryTemplate t);

struct GeneratedCategory {
  OmadPrior prior;          // exact generating prior
  TrainingSet train;
  std::vector<VecX> betas;  // generating shape parameters, one per instance
};

/// Builds K_b_true box templates with sizes drawn from the category's size ranges,
/// zero-centered in canonical space, and samples per-instance shape
/// parameters from a seeded Gaussian. Pivots are linear in beta, so the
/// generating joint function is exactly representable.
GeneratedCategory gen_category(const CategorySpec& spec, int n_instances, std::uint64_t seed);

struct StateRanges {
  Interval revolute{rad_from_deg(15.0), rad_from_deg(165.0)};
  Interval prismatic{0.0, 0.3};
  Vec3 translation_lo{-0.5, -0.5, 1.0};
  Vec3 translation_hi{0.5, 0.5, 2.0};
  bool random_rotation = true;
};

struct Scene {
  int scene_id = 0;
  int instance_id = 0;
  VecX beta_star;
  JointStateSet states_star;
  Keypoints targets_clean;
  Keypoints targets_noisy;
  double noise_sigma = 0.0;
};

/// Scene s uses instance s mod N and its own RNG stream seeded by (seed, s).
std::vector<Scene> gen_scenes(const OmadPrior& prior, const std::vector<VecX>& instance_betas,
                              int n_scenes, double noise_sigma, const StateRanges& ranges,
                              std::uint64_t seed);

/// Shoemake's uniform unit quaternion from three uniforms in [0, 1).
Quat uniform_quaternion(double u1, double u2, double u3);

}  // namespace omad
