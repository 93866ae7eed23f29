#include "omad/io.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "omad/errors.hpp"

namespace omad::io {

namespace {

void expect_object(const json& j, const std::string& ctx) {
  if (!j.is_object()) throw FormatError(ctx + ": expected an object");
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& ctx) {
  expect_object(j, ctx);
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw FormatError(ctx + ": unknown field '" + key + "'");
  }
}

const json& field(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(ctx + ": missing field '" + key + "'");
  return *it;
}

template <typename T>
T get(const json& j, const char* key, const std::string& ctx) {
  try {
    return field(j, key, ctx).get<T>();
  } catch (const json::type_error& e) {
    throw FormatError(ctx + ": field '" + key + "' has the wrong type");
  }
}

void check_version(const json& j, const std::string& ctx) {
  const int v = get<int>(j, "format_version", ctx);
  if (v > kFormatVersion) {
    throw FormatError(ctx + ": format_version " + std::to_string(v) +
                      " is newer than supported version " + std::to_string(kFormatVersion));
  }
  if (v < 1) throw FormatError(ctx + ": invalid format_version");
}

json vec_json(const Eigen::Ref<const VecX>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

VecX vec_from(const json& j, const std::string& ctx, Eigen::Index expected = -1) {
  if (!j.is_array()) throw FormatError(ctx + ": expected an array of numbers");
  VecX v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(ctx + ": expected numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  if (expected >= 0 && v.size() != expected) {
    throw FormatError(ctx + ": expected " + std::to_string(expected) + " entries");
  }
  return v;
}

Vec3 vec3_from(const json& j, const std::string& ctx) { return vec_from(j, ctx, 3); }

json mat_json(const MatX& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

MatX mat_from(const json& j, const std::string& ctx, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw FormatError(ctx + ": expected " + std::to_string(rows) + " rows");
  }
  MatX m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    m.row(r) = vec_from(j[static_cast<std::size_t>(r)], ctx, cols).transpose();
  }
  return m;
}

json keypoints_json(const Keypoints& kp) { return mat_json(kp); }

Keypoints keypoints_from(const json& j, const std::string& ctx, Eigen::Index rows) {
  return mat_from(j, ctx, rows, 3);
}

JointType joint_type_from(const std::string& s, const std::string& ctx) {
  if (s == "free") return JointType::Free;
  if (s == "revolute") return JointType::Revolute;
  if (s == "prismatic") return JointType::Prismatic;
  throw FormatError(ctx + ": unknown joint type '" + s + "'");
}

json params_json(const JointParamSet& params) {
  json a = json::array();
  for (const auto& p : params) {
    if (p) {
      a.push_back({{"direction", vec_json(p->direction)}, {"pivot", vec_json(p->pivot)}});
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

JointParamSet params_from(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw FormatError(ctx + ": expected an array");
  JointParamSet out;
  for (const json& e : j) {
    if (e.is_null()) {
      out.emplace_back();
      continue;
    }
    check_keys(e, {"direction", "pivot"}, ctx);
    out.push_back(JointParams{vec3_from(field(e, "direction", ctx), ctx),
                              vec3_from(field(e, "pivot", ctx), ctx)});
  }
  return out;
}

template <typename Fn>
auto wrap_contract(const std::string& ctx, Fn&& fn) {
  try {
    return fn();
  } catch (const ContractViolation& e) {
    throw FormatError(ctx + ": " + e.what());
  }
}

}  // namespace

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ReadError("cannot open '" + path.string() + "' for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ReadError("parse error in '" + path.string() + "' at byte " + std::to_string(e.byte) +
                        ": " + e.what(),
                    e.byte);
  }
}

void save_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReadError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ReadError("failed writing '" + path.string() + "'");
}

void save_json(const std::filesystem::path& path, const json& doc) {
  save_text(path, doc.dump(1) + "\n");
}

json to_json(const KinematicTree& tree) {
  json joints = json::array();
  for (const Joint& jt : tree.joints()) {
    joints.push_back({{"type", to_string(jt.type)}, {"parent", jt.parent}, {"child", jt.child}});
  }
  return {{"parts", tree.part_count()}, {"joints", joints}, {"keypoint_part", tree.keypoint_part()}};
}

KinematicTree tree_from_json(const json& j) {
  const std::string ctx = "tree";
  check_keys(j, {"parts", "joints", "keypoint_part"}, ctx);
  std::vector<Joint> joints;
  const json& ja = field(j, "joints", ctx);
  if (!ja.is_array()) throw FormatError(ctx + ": joints must be an array");
  for (const json& e : ja) {
    check_keys(e, {"type", "parent", "child"}, ctx + ".joints");
    joints.push_back({joint_type_from(get<std::string>(e, "type", ctx), ctx),
                      get<int>(e, "parent", ctx), get<int>(e, "child", ctx)});
  }
  return wrap_contract(ctx, [&] {
    return KinematicTree(get<int>(j, "parts", ctx), std::move(joints),
                         get<std::vector<int>>(j, "keypoint_part", ctx));
  });
}

json to_json(const JointState& s) {
  return std::visit(
      [](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, FreeState>) {
          return {{"type", "free"},
                  {"rotation", {v.rotation.w(), v.rotation.x(), v.rotation.y(), v.rotation.z()}},
                  {"translation", vec_json(v.translation)}};
        } else if constexpr (std::is_same_v<T, RevoluteState>) {
          return {{"type", "revolute"}, {"angle", v.angle}};
        } else {
          return {{"type", "prismatic"}, {"displacement", v.displacement}};
        }
      },
      s);
}

JointState state_from_json(const json& j) {
  const std::string ctx = "joint state";
  expect_object(j, ctx);
  const JointType t = joint_type_from(get<std::string>(j, "type", ctx), ctx);
  switch (t) {
    case JointType::Free: {
      check_keys(j, {"type", "rotation", "translation"}, ctx);
      const VecX q = vec_from(field(j, "rotation", ctx), ctx + ".rotation", 4);
      FreeState f;
      f.rotation = Quat(q(0), q(1), q(2), q(3));
      if (std::abs(f.rotation.norm() - 1.0) > 1e-9) {
        throw FormatError(ctx + ": rotation quaternion is not normalized");
      }
      f.translation = vec3_from(field(j, "translation", ctx), ctx + ".translation");
      return f;
    }
    case JointType::Revolute:
      check_keys(j, {"type", "angle"}, ctx);
      return RevoluteState{get<double>(j, "angle", ctx)};
    case JointType::Prismatic:
      check_keys(j, {"type", "displacement"}, ctx);
      return PrismaticState{get<double>(j, "displacement", ctx)};
  }
  throw FormatError(ctx + ": unreachable joint type");
}

namespace {

json states_json(const JointStateSet& states) {
  json a = json::array();
  for (const auto& s : states) a.push_back(to_json(s));
  return a;
}

JointStateSet states_from(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw FormatError(ctx + ": expected an array of joint states");
  JointStateSet out;
  for (const json& e : j) out.push_back(state_from_json(e));
  return out;
}

}  // namespace

json to_json(const OmadPrior& prior) {
  const auto& g = prior.gamma;
  return {{"format_version", kFormatVersion},
          {"category_name", prior.category_name},
          {"M", prior.keypoint_count()},
          {"K_b", prior.basis_count()},
          {"H", g.hidden_dim()},
          {"tree", to_json(prior.tree)},
          {"basis", mat_json(prior.basis.matrix)},
          {"gamma",
           {{"W1", mat_json(g.W1)}, {"b1", vec_json(g.b1)}, {"W2", mat_json(g.W2)}, {"b2", vec_json(g.b2)}}},
          {"rest_states", states_json(prior.rest_states)},
          {"metadata",
           {{"mean_beta", vec_json(prior.metadata.mean_beta)},
            {"data_diameter", prior.metadata.data_diameter}}}};
}

OmadPrior prior_from_json(const json& j) {
  const std::string ctx = "prior";
  check_keys(j, {"format_version", "category_name", "M", "K_b", "H", "tree", "basis", "gamma",
                 "rest_states", "metadata"},
             ctx);
  check_version(j, ctx);
  OmadPrior p;
  p.category_name = get<std::string>(j, "category_name", ctx);
  p.tree = tree_from_json(field(j, "tree", ctx));
  const int M = get<int>(j, "M", ctx);
  const int Kb = get<int>(j, "K_b", ctx);
  const int H = get<int>(j, "H", ctx);
  if (M != p.tree.keypoint_count()) throw FormatError(ctx + ": M does not match the tree");
  if (Kb < 1 || H < 1) throw FormatError(ctx + ": K_b and H must be positive");
  p.basis.matrix = mat_from(field(j, "basis", ctx), ctx + ".basis", 3 * M, Kb);

  const json& g = field(j, "gamma", ctx);
  check_keys(g, {"W1", "b1", "W2", "b2"}, ctx + ".gamma");
  const int out = 6 * p.tree.dof1_count();
  p.gamma.W1 = mat_from(field(g, "W1", ctx), ctx + ".gamma.W1", H, Kb);
  p.gamma.b1 = vec_from(field(g, "b1", ctx), ctx + ".gamma.b1", H);
  p.gamma.W2 = mat_from(field(g, "W2", ctx), ctx + ".gamma.W2", out, H);
  p.gamma.b2 = vec_from(field(g, "b2", ctx), ctx + ".gamma.b2", out);
  p.rest_states = states_from(field(j, "rest_states", ctx), ctx + ".rest_states");

  const json& meta = field(j, "metadata", ctx);
  check_keys(meta, {"mean_beta", "data_diameter"}, ctx + ".metadata");
  p.metadata.mean_beta = vec_from(field(meta, "mean_beta", ctx), ctx + ".metadata.mean_beta");
  p.metadata.data_diameter = get<double>(meta, "data_diameter", ctx);
  wrap_contract(ctx, [&] {
    p.validate();
    return 0;
  });
  return p;
}

json to_json(const TrainingSetFile& f) {
  json instances = json::array();
  for (const auto& inst : f.train.instances) {
    instances.push_back(
        {{"keypoints", keypoints_json(inst.keypoints)}, {"joint_params", params_json(inst.joint_params)}});
  }
  return {{"format_version", kFormatVersion},
          {"category_name", f.category_name},
          {"generator", f.generator},
          {"tree", to_json(f.train.tree)},
          {"instances", instances}};
}

TrainingSetFile trainset_from_json(const json& j) {
  const std::string ctx = "trainset";
  check_keys(j, {"format_version", "category_name", "generator", "tree", "instances"}, ctx);
  check_version(j, ctx);
  TrainingSetFile f;
  f.category_name = get<std::string>(j, "category_name", ctx);
  f.generator = field(j, "generator", ctx);
  f.train.tree = tree_from_json(field(j, "tree", ctx));
  const json& insts = field(j, "instances", ctx);
  if (!insts.is_array()) throw FormatError(ctx + ": instances must be an array");
  const int M = f.train.tree.keypoint_count();
  for (std::size_t n = 0; n < insts.size(); ++n) {
    const std::string ictx = ctx + ".instances[" + std::to_string(n) + "]";
    check_keys(insts[n], {"keypoints", "joint_params"}, ictx);
    TrainingInstance inst;
    inst.keypoints = keypoints_from(field(insts[n], "keypoints", ictx), ictx + ".keypoints", M);
    inst.joint_params = params_from(field(insts[n], "joint_params", ictx), ictx + ".joint_params");
    f.train.instances.push_back(std::move(inst));
  }
  wrap_contract(ctx, [&] {
    f.train.validate();
    return 0;
  });
  return f;
}

json to_json(const SceneFile& f) {
  json scenes = json::array();
  for (const Scene& s : f.scenes) {
    scenes.push_back({{"scene_id", s.scene_id},
                      {"instance_id", s.instance_id},
                      {"beta_star", vec_json(s.beta_star)},
                      {"states_star", states_json(s.states_star)},
                      {"targets_clean", keypoints_json(s.targets_clean)},
                      {"targets_noisy", keypoints_json(s.targets_noisy)},
                      {"noise_sigma", s.noise_sigma}});
  }
  return {{"format_version", kFormatVersion},
          {"category_name", f.category_name},
          {"generator", f.generator},
          {"scenes", scenes}};
}

SceneFile scenes_from_json(const json& j) {
  const std::string ctx = "scenes";
  check_keys(j, {"format_version", "category_name", "generator", "scenes"}, ctx);
  check_version(j, ctx);
  SceneFile f;
  f.category_name = get<std::string>(j, "category_name", ctx);
  f.generator = field(j, "generator", ctx);
  const json& arr = field(j, "scenes", ctx);
  if (!arr.is_array()) throw FormatError(ctx + ": scenes must be an array");
  for (std::size_t n = 0; n < arr.size(); ++n) {
    const std::string sctx = ctx + "[" + std::to_string(n) + "]";
    const json& e = arr[n];
    check_keys(e, {"scene_id", "instance_id", "beta_star", "states_star", "targets_clean",
                   "targets_noisy", "noise_sigma"},
               sctx);
    Scene s;
    s.scene_id = get<int>(e, "scene_id", sctx);
    s.instance_id = get<int>(e, "instance_id", sctx);
    s.beta_star = vec_from(field(e, "beta_star", sctx), sctx + ".beta_star");
    s.states_star = states_from(field(e, "states_star", sctx), sctx + ".states_star");
    const json& clean = field(e, "targets_clean", sctx);
    if (!clean.is_array()) throw FormatError(sctx + ": targets_clean must be an array");
    const auto M = static_cast<Eigen::Index>(clean.size());
    s.targets_clean = keypoints_from(clean, sctx + ".targets_clean", M);
    s.targets_noisy = keypoints_from(field(e, "targets_noisy", sctx), sctx + ".targets_noisy", M);
    s.noise_sigma = get<double>(e, "noise_sigma", sctx);
    if (!s.targets_clean.allFinite() || !s.targets_noisy.allFinite()) {
      throw FormatError(sctx + ": targets must be finite");
    }
    f.scenes.push_back(std::move(s));
  }
  return f;
}

json to_json(const ResultsFile& f) {
  json arr = json::array();
  for (const SceneFit& r : f.results) {
    json states = json::array();
    for (const auto& s : r.states) states.push_back(s ? to_json(*s) : json(nullptr));
    arr.push_back({{"scene_id", r.scene_id},
                   {"instance_id", r.instance_id ? json(*r.instance_id) : json(nullptr)},
                   {"beta", vec_json(r.beta)},
                   {"states", states},
                   {"residual", r.residual},
                   {"energy", r.energy},
                   {"iterations", r.iterations},
                   {"converged", r.converged},
                   {"restarts_used", r.restarts_used}});
  }
  return {{"format_version", kFormatVersion},
          {"category_name", f.category_name},
          {"solver", f.solver},
          {"results", arr}};
}

ResultsFile results_from_json(const json& j) {
  const std::string ctx = "results";
  check_keys(j, {"format_version", "category_name", "solver", "results"}, ctx);
  check_version(j, ctx);
  ResultsFile f;
  f.category_name = get<std::string>(j, "category_name", ctx);
  f.solver = field(j, "solver", ctx);
  const json& arr = field(j, "results", ctx);
  if (!arr.is_array()) throw FormatError(ctx + ": results must be an array");
  for (std::size_t n = 0; n < arr.size(); ++n) {
    const std::string rctx = ctx + "[" + std::to_string(n) + "]";
    const json& e = arr[n];
    check_keys(e, {"scene_id", "instance_id", "beta", "states", "residual", "energy", "iterations",
                   "converged", "restarts_used"},
               rctx);
    SceneFit r;
    r.scene_id = get<int>(e, "scene_id", rctx);
    if (auto it = e.find("instance_id"); it != e.end() && !it->is_null()) {
      if (!it->is_number_integer()) throw FormatError(rctx + ": instance_id must be an integer");
      r.instance_id = it->get<int>();
    }
    r.beta = vec_from(field(e, "beta", rctx), rctx + ".beta");
    const json& states = field(e, "states", rctx);
    if (!states.is_array()) throw FormatError(rctx + ": states must be an array");
    for (const json& s : states) {
      if (s.is_null()) {
        r.states.emplace_back();
      } else {
        r.states.emplace_back(state_from_json(s));
      }
    }
    // A failed fit stores non-finite values, which JSON writes as null.
    auto nullable = [&](const char* key) {
      const json& v = field(e, key, rctx);
      return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : get<double>(e, key, rctx);
    };
    r.residual = nullable("residual");
    r.energy = nullable("energy");
    r.iterations = get<int>(e, "iterations", rctx);
    r.converged = get<bool>(e, "converged", rctx);
    r.restarts_used = get<int>(e, "restarts_used", rctx);
    f.results.push_back(std::move(r));
  }
  return f;
}

}  // namespace omad::io
