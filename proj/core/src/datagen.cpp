#include "omad/datagen.hpp"

#include <array>
#include <cmath>
#include <random>
#include <string>

#include "omad/errors.hpp"

namespace omad {

namespace {

struct Box {
  Vec3 center;
  Vec3 half;
};

struct AxisLayout {
  Vec3 direction;
  Vec3 pivot;
};

// Canonical layout of one object; every coordinate is linear in the size
// parameters, so mixing templates mixes sizes.
struct Layout {
  std::vector<Box> parts;       // part 0 is the root
  std::vector<int> parent;      // parent part of parts 1..n (index 0 unused)
  std::vector<JointType> types; // joint type of parts 1..n (index 0 unused)
  std::vector<AxisLayout> axes; // axis of parts 1..n (index 0 unused)
};

// Box corners, ordered so any first four are not coplanar.
constexpr std::array<std::array<double, 3>, 8> kCorners{{{-1, -1, -1},
                                                         {1, 1, -1},
                                                         {1, -1, 1},
                                                         {-1, 1, 1},
                                                         {1, 1, 1},
                                                         {-1, -1, 1},
                                                         {-1, 1, -1},
                                                         {1, -1, -1}}};

Layout layout_for(CategoryTemplate t, const VecX& s) {
  Layout L;
  auto add = [&L](Box b, int parent, JointType type, AxisLayout axis) {
    L.parts.push_back(b);
    L.parent.push_back(parent);
    L.types.push_back(type);
    L.axes.push_back(axis);
  };
  const AxisLayout none{Vec3::UnitZ(), Vec3::Zero()};
  switch (t) {
    case CategoryTemplate::Hinge2: {
      // width, depth, base height, lid thickness, lid depth
      const double w = s(0), d = s(1), hb = s(2), hl = s(3), dl = s(4);
      add({Vec3(0, hb / 2, 0), Vec3(w / 2, hb / 2, d / 2)}, -1, JointType::Free, none);
      add({Vec3(0, hb + hl / 2, -d / 2 + dl / 2), Vec3(w / 2, hl / 2, dl / 2)}, 0,
          JointType::Revolute, {Vec3(-1, 0, 0), Vec3(0, hb, -d / 2)});
      break;
    }
    case CategoryTemplate::Hinge3: {
      // frame width, frame height, frame thickness, temple length, temple width, temple height
      const double w = s(0), h = s(1), t3 = s(2), len = s(3), tw = s(4), th = s(5);
      add({Vec3(0, 0, 0), Vec3(w / 2, h / 2, t3 / 2)}, -1, JointType::Free, none);
      add({Vec3(-w / 2 + tw / 2, 0, -t3 / 2 - len / 2), Vec3(tw / 2, th / 2, len / 2)}, 0,
          JointType::Revolute, {Vec3(0, -1, 0), Vec3(-w / 2, 0, -t3 / 2)});
      add({Vec3(w / 2 - tw / 2, 0, -t3 / 2 - len / 2), Vec3(tw / 2, th / 2, len / 2)}, 0,
          JointType::Revolute, {Vec3(0, 1, 0), Vec3(w / 2, 0, -t3 / 2)});
      break;
    }
    case CategoryTemplate::Door2: {
      // width, height, depth, door thickness
      const double w = s(0), h = s(1), d = s(2), td = s(3);
      add({Vec3(0, h / 2, 0), Vec3(w / 2, h / 2, d / 2)}, -1, JointType::Free, none);
      add({Vec3(0, h / 2, d / 2 + td / 2), Vec3(w / 2, h / 2, td / 2)}, 0, JointType::Revolute,
          {Vec3(1, 0, 0), Vec3(0, 0, d / 2)});
      break;
    }
    case CategoryTemplate::Pivot2: {
      // blade length, handle length A, blade width, thickness, handle length B
      const double f = s(0), ba = s(1), wd = s(2), th = s(3), bb = s(4);
      add({Vec3((f - ba) / 2, 0, -th / 2), Vec3((f + ba) / 2, wd / 2, th / 2)}, -1,
          JointType::Free, none);
      add({Vec3((f - bb) / 2, 0, th / 2), Vec3((f + bb) / 2, wd / 2, th / 2)}, 0,
          JointType::Revolute, {Vec3(0, 0, 1), Vec3(0, 0, 0)});
      break;
    }
    case CategoryTemplate::Slider4: {
      // cabinet width, height, depth, drawer width, drawer depth
      const double w = s(0), h = s(1), d = s(2), dw = s(3), dd = s(4);
      add({Vec3(0, 0, 0), Vec3(w / 2, h / 2, d / 2)}, -1, JointType::Free, none);
      for (int i = 0; i < 3; ++i) {
        const double yc = -h / 2 + (2 * i + 1) * h / 6;
        add({Vec3(0, yc, d / 2 - dd / 2), Vec3(dw / 2, h / 6, dd / 2)}, 0, JointType::Prismatic,
            {Vec3(0, 0, 1), Vec3(0, yc, d / 2)});
      }
      break;
    }
  }
  return L;
}

KinematicTree tree_for(const Layout& L, int keypoints_per_part) {
  const auto parts = static_cast<int>(L.parts.size());
  std::vector<Joint> joints;
  for (int p = 0; p < parts; ++p) {
    joints.push_back({L.types[static_cast<std::size_t>(p)], L.parent[static_cast<std::size_t>(p)], p});
  }
  std::vector<int> kp_part;
  for (int p = 0; p < parts; ++p) kp_part.insert(kp_part.end(), static_cast<std::size_t>(keypoints_per_part), p);
  return KinematicTree(parts, std::move(joints), std::move(kp_part));
}

// Flattened zero-centered keypoints and per-slot (direction, pivot) of one layout.
struct TemplateShape {
  VecX keypoints;
  std::vector<AxisLayout> axes;  // per 1-DoF slot
};

TemplateShape template_shape(const Layout& L, int keypoints_per_part) {
  Keypoints kp(static_cast<Eigen::Index>(L.parts.size()) * keypoints_per_part, 3);
  Eigen::Index row = 0;
  for (const Box& b : L.parts) {
    for (int c = 0; c < keypoints_per_part; ++c) {
      const auto& s = kCorners[static_cast<std::size_t>(c)];
      kp.row(row++) = (b.center + Vec3(s[0], s[1], s[2]).cwiseProduct(b.half)).transpose();
    }
  }
  const Vec3 mean = kp.colwise().mean().transpose();
  kp.rowwise() -= mean.transpose();
  TemplateShape out;
  out.keypoints = flatten(kp);
  for (std::size_t p = 1; p < L.parts.size(); ++p) {
    out.axes.push_back({L.axes[p].direction.normalized(), L.axes[p].pivot - mean});
  }
  return out;
}

}  // namespace

const char* to_string(CategoryTemplate t) {
  switch (t) {
    case CategoryTemplate::Hinge2:
      return "hinge2";
    case CategoryTemplate::Hinge3:
      return "hinge3";
    case CategoryTemplate::Door2:
      return "door2";
    case CategoryTemplate::Pivot2:
      return "pivot2";
    case CategoryTemplate::Slider4:
      return "slider4";
  }
  return "?";
}

std::vector<CategoryTemplate> all_categories() {
  return {CategoryTemplate::Hinge2, CategoryTemplate::Hinge3, CategoryTemplate::Door2,
          CategoryTemplate::Pivot2, CategoryTemplate::Slider4};
}

std::optional<CategoryTemplate> parse_category(const std::string& name) {
  for (CategoryTemplate t : all_categories()) {
    if (name == to_string(t)) return t;
  }
  return std::nullopt;
}

std::vector<std::pair<std::string, Interval>> default_size_ranges(CategoryTemplate t) {
  switch (t) {
    case CategoryTemplate::Hinge2:
      return {{"width", {0.30, 0.42}},
              {"depth", {0.20, 0.30}},
              {"base_height", {0.015, 0.03}},
              {"lid_thickness", {0.006, 0.015}},
              {"lid_depth", {0.18, 0.28}}};
    case CategoryTemplate::Hinge3:
      return {{"frame_width", {0.12, 0.16}},   {"frame_height", {0.04, 0.06}},
              {"frame_thickness", {0.005, 0.01}}, {"temple_length", {0.12, 0.16}},
              {"temple_width", {0.004, 0.008}}, {"temple_height", {0.004, 0.01}}};
    case CategoryTemplate::Door2:
      return {{"width", {0.55, 0.65}},
              {"height", {0.75, 0.90}},
              {"depth", {0.55, 0.65}},
              {"door_thickness", {0.03, 0.06}}};
    case CategoryTemplate::Pivot2:
      return {{"blade_length", {0.08, 0.14}},
              {"handle_a", {0.06, 0.10}},
              {"blade_width", {0.01, 0.025}},
              {"thickness", {0.002, 0.005}},
              {"handle_b", {0.06, 0.10}}};
    case CategoryTemplate::Slider4:
      return {{"width", {0.40, 0.60}},
              {"height", {0.50, 0.80}},
              {"depth", {0.40, 0.55}},
              {"drawer_width", {0.34, 0.52}},
              {"drawer_depth", {0.30, 0.45}}};
  }
  return {};
}

GeneratedCategory gen_category(const CategorySpec& spec, int n_instances, std::uint64_t seed) {
  const auto defaults = default_size_ranges(spec.category);
  std::vector<Interval> ranges = spec.size_ranges;
  if (ranges.empty()) {
    for (const auto& [name, iv] : defaults) ranges.push_back(iv);
  }
  if (ranges.size() != defaults.size()) {
    throw ContractViolation(std::string(to_string(spec.category)) + " takes " +
                            std::to_string(defaults.size()) + " size ranges");
  }
  for (const Interval& iv : ranges) {
    if (!(iv.lo > 0.0) || iv.hi < iv.lo) throw ContractViolation("size ranges must be positive and ordered");
  }
  if (spec.keypoints_per_part < 1 || spec.keypoints_per_part > 8) {
    throw ContractViolation("keypoints per part must be between 1 and 8");
  }
  const int K = spec.basis_count_true;
  if (K < 1 || K > static_cast<int>(ranges.size())) {
    throw ContractViolation("generative rank must be between 1 and the number of size parameters");
  }
  if (n_instances < K) {
    throw InsufficientData("gen_category needs at least K_b_true = " + std::to_string(K) +
                           " instances");
  }

  std::mt19937_64 rng(seed);
  std::vector<TemplateShape> templates;
  KinematicTree tree;
  for (int k = 0; k < K; ++k) {
    VecX sizes(static_cast<Eigen::Index>(ranges.size()));
    for (std::size_t d = 0; d < ranges.size(); ++d) {
      std::uniform_real_distribution<double> u(ranges[d].lo, ranges[d].hi);
      sizes(static_cast<Eigen::Index>(d)) = u(rng);
    }
    const Layout L = layout_for(spec.category, sizes);
    if (k == 0) tree = tree_for(L, spec.keypoints_per_part);
    templates.push_back(template_shape(L, spec.keypoints_per_part));
  }

  GeneratedCategory out;
  OmadPrior& prior = out.prior;
  prior.category_name = to_string(spec.category);
  prior.tree = tree;
  prior.rest_states = rest_states(tree);
  prior.basis.matrix.resize(templates.front().keypoints.size(), K);
  for (int k = 0; k < K; ++k) prior.basis.matrix.col(k) = templates[static_cast<std::size_t>(k)].keypoints;

  // Exact linear joint function: hidden = [relu(beta); relu(-beta)], so
  // W2 * hidden = Q * beta with W2 = [Q, -Q].
  const int slots = tree.dof1_count();
  JointFunctionWeights& g = prior.gamma;
  g.W1.resize(2 * K, K);
  g.W1 << MatX::Identity(K, K), -MatX::Identity(K, K);
  g.b1 = VecX::Zero(2 * K);
  g.W2 = MatX::Zero(6 * slots, 2 * K);
  g.b2 = VecX::Zero(6 * slots);
  for (int s = 0; s < slots; ++s) {
    g.b2.segment<3>(6 * s) = templates.front().axes[static_cast<std::size_t>(s)].direction;
    for (int k = 0; k < K; ++k) {
      const Vec3 q = templates[static_cast<std::size_t>(k)].axes[static_cast<std::size_t>(s)].pivot;
      g.W2.block<3, 1>(6 * s + 3, k) = q;
      g.W2.block<3, 1>(6 * s + 3, K + k) = -q;
    }
  }

  const double mean = 1.0 / K;
  std::normal_distribution<double> normal(mean, 0.25 * mean);
  out.train.tree = tree;
  out.betas.reserve(static_cast<std::size_t>(n_instances));
  VecX beta_sum = VecX::Zero(K);
  for (int n = 0; n < n_instances; ++n) {
    VecX beta(K);
    for (int k = 0; k < K; ++k) beta(k) = normal(rng);
    beta_sum += beta;
    TrainingInstance inst;
    inst.keypoints = shape_apply(prior.basis, beta);
    inst.joint_params = joint_apply(prior.gamma, beta, tree);
    out.train.instances.push_back(std::move(inst));
    out.betas.push_back(std::move(beta));
  }
  prior.metadata.mean_beta = beta_sum / n_instances;
  prior.metadata.data_diameter = diameter(shape_apply(prior.basis, prior.metadata.mean_beta));
  prior.validate();
  out.train.validate();
  return out;
}

Quat uniform_quaternion(double u1, double u2, double u3) {
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double t1 = 2.0 * kPi * u2;
  const double t2 = 2.0 * kPi * u3;
  Quat q(b * std::cos(t2), a * std::sin(t1), a * std::cos(t1), b * std::sin(t2));
  return q.normalized();
}

std::vector<Scene> gen_scenes(const OmadPrior& prior, const std::vector<VecX>& instance_betas,
                              int n_scenes, double noise_sigma, const StateRanges& ranges,
                              std::uint64_t seed) {
  if (n_scenes < 0) throw ContractViolation("scene count must be non-negative");
  if (!(noise_sigma >= 0.0)) throw ContractViolation("noise sigma must be non-negative");
  if (n_scenes > 0 && instance_betas.empty()) throw InsufficientData("no instances to place in scenes");
  if (ranges.revolute.hi < ranges.revolute.lo || ranges.prismatic.hi < ranges.prismatic.lo ||
      (ranges.translation_hi - ranges.translation_lo).minCoeff() < 0.0) {
    throw ContractViolation("state ranges must be ordered");
  }
  if (ranges.revolute.lo <= -kPi || ranges.revolute.hi >= kPi) {
    throw ContractViolation("revolute range must lie inside (-pi, pi)");
  }
  const KinematicTree& tree = prior.tree;

  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(n_scenes));
  for (int s = 0; s < n_scenes; ++s) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

    Scene sc;
    sc.scene_id = s;
    sc.instance_id = s % static_cast<int>(instance_betas.size());
    sc.beta_star = instance_betas[static_cast<std::size_t>(sc.instance_id)];
    sc.noise_sigma = noise_sigma;
    sc.states_star = rest_states(tree);
    for (int j = 0; j < tree.joint_count(); ++j) {
      JointState& st = sc.states_star[static_cast<std::size_t>(j)];
      switch (tree.joint(j).type) {
        case JointType::Free: {
          FreeState f;
          if (ranges.random_rotation) {
            const double u1 = unit(rng), u2 = unit(rng), u3 = unit(rng);
            f.rotation = uniform_quaternion(u1, u2, u3);
          }
          for (int a = 0; a < 3; ++a) {
            f.translation(a) = uniform(ranges.translation_lo(a), ranges.translation_hi(a));
          }
          st = f;
          break;
        }
        case JointType::Revolute:
          st = RevoluteState{uniform(ranges.revolute.lo, ranges.revolute.hi)};
          break;
        case JointType::Prismatic:
          st = PrismaticState{uniform(ranges.prismatic.lo, ranges.prismatic.hi)};
          break;
      }
    }
    const JointParamSet params = joint_apply(prior.gamma, sc.beta_star, tree);
    sc.targets_clean = deform(tree, shape_apply(prior.basis, sc.beta_star), params, sc.states_star);
    sc.targets_noisy = sc.targets_clean;
    if (noise_sigma > 0.0) {
      std::normal_distribution<double> noise(0.0, noise_sigma);
      for (Eigen::Index i = 0; i < sc.targets_noisy.size(); ++i) sc.targets_noisy.data()[i] += noise(rng);
    }
    scenes.push_back(std::move(sc));
  }
  return scenes;
}

}  // namespace omad
