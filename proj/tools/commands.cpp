#include "commands.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <tuple>
#include <vector>

#include "omad/datagen.hpp"
#include "omad/errors.hpp"
#include "omad/estimator.hpp"
#include "omad/evalkit.hpp"
#include "omad/io.hpp"
#include "omad/prior_learning.hpp"

namespace omad::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::ReadError("cannot create directory '" + dir.string() + "': " + ec.message());
}

int thread_budget(std::size_t jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("OMAD_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) n = v;
  }
  n = std::max(n, 1);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), std::max<std::size_t>(jobs, 1)));
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

int cmd_gen(const GenOptions& opt, std::ostream& out, std::ostream& /*err*/) {
  const std::optional<CategoryTemplate> cat = parse_category(opt.category);
  if (!cat) throw ContractViolation("unknown category '" + opt.category + "'");

  const CategorySpec spec{*cat, opt.keypoints_per_part, opt.basis_count_true, {}};
  const GeneratedCategory g = gen_category(spec, opt.n_instances, opt.seed);
  const double sigma = opt.noise_relative ? opt.noise * g.prior.metadata.data_diameter : opt.noise;

  StateRanges ranges;
  ranges.revolute = {rad_from_deg(opt.revolute_deg.first), rad_from_deg(opt.revolute_deg.second)};
  ranges.prismatic = {opt.prismatic.first, opt.prismatic.second};
  const std::vector<Scene> scenes = gen_scenes(g.prior, g.betas, opt.n_scenes, sigma, ranges, opt.seed);

  const json generator = {{"category", to_string(*cat)},
                          {"n_instances", opt.n_instances},
                          {"n_scenes", opt.n_scenes},
                          {"noise", opt.noise},
                          {"noise_relative", opt.noise_relative},
                          {"noise_sigma", sigma},
                          {"seed", opt.seed},
                          {"keypoints_per_part", opt.keypoints_per_part},
                          {"basis_count_true", opt.basis_count_true},
                          {"revolute_deg", {opt.revolute_deg.first, opt.revolute_deg.second}},
                          {"prismatic", {opt.prismatic.first, opt.prismatic.second}}};

  make_dir(opt.out_dir);
  io::save_json(opt.out_dir / "prior_gt.json", io::to_json(g.prior));
  io::save_json(opt.out_dir / "trainset.json", io::to_json(io::TrainingSetFile{to_string(*cat), generator, g.train}));
  io::save_json(opt.out_dir / "scenes.json", io::to_json(io::SceneFile{to_string(*cat), generator, scenes}));

  out << "gen " << to_string(*cat) << ": " << opt.n_instances << " instances, " << scenes.size()
      << " scenes, M=" << g.prior.keypoint_count() << ", sigma=" << brief(sigma) << ", seed=" << opt.seed
      << " -> " << opt.out_dir.string() << "\n";
  return 0;
}

int cmd_learn_prior(const LearnOptions& opt, std::ostream& out, std::ostream& /*err*/) {
  const io::TrainingSetFile tf = io::trainset_from_json(io::load_json(opt.trainset));
  tf.train.validate();

  LearnConfig cfg;
  cfg.basis_count = opt.k_basis;
  cfg.hidden = opt.hidden;
  cfg.epochs = opt.epochs;
  cfg.lr = opt.lr;
  cfg.lambda = opt.lambda;
  cfg.reg_weight = opt.reg_weight;
  cfg.sep_margin = opt.sep_margin;
  cfg.seed = opt.seed;

  const int n = static_cast<int>(tf.train.instances.size());
  const int rank_bound = std::min(n, 3 * tf.train.keypoint_count());
  if (opt.k_basis > rank_bound) {
    throw InsufficientData("--k-basis " + std::to_string(opt.k_basis) + " exceeds the data rank bound " +
                           std::to_string(rank_bound) + " (" + std::to_string(n) + " instances, 3M = " +
                           std::to_string(3 * tf.train.keypoint_count()) + ")");
  }
  const LearnedPrior learned = learn_prior(tf.train, cfg, tf.category_name);

  make_dir(opt.out);
  io::save_json(opt.out / "prior_learned.json", io::to_json(learned.prior));
  std::ostringstream csv;
  csv << "epoch,l_dir,l_pivot,l_joint,total\n";
  for (const LossRecord& r : learned.joint_fit.history) {
    csv << r.epoch << ',' << num(r.direction) << ',' << num(r.pivot) << ',' << num(r.joint) << ','
        << num(r.total) << '\n';
  }
  io::save_text(opt.out / "loss_history.csv", csv.str());

  const LossRecord& last = learned.joint_fit.history.back();
  out << "reconstruction error: " << brief(learned.basis_fit.reconstruction_error) << "\n";
  out << "joint loss: " << brief(last.joint) << " (direction " << brief(last.direction) << ", pivot "
      << brief(last.pivot) << ") after " << cfg.epochs << " epochs\n";
  out << "separation loss on mean shape: " << brief(learned.separation) << " (margin " << brief(learned.margin)
      << ")\n";
  return 0;
}

int cmd_fit(const FitOptions& opt, std::ostream& out, std::ostream& err) {
  const OmadPrior prior = io::prior_from_json(io::load_json(opt.prior));
  const io::SceneFile sf = io::scenes_from_json(io::load_json(opt.scenes));
  const int M = prior.keypoint_count();
  for (const Scene& s : sf.scenes) {
    const Keypoints& t = opt.use_clean ? s.targets_clean : s.targets_noisy;
    if (t.rows() != M) {
      throw ContractViolation("scene " + std::to_string(s.scene_id) + " has " + std::to_string(t.rows()) +
                              " keypoints but the prior expects " + std::to_string(M));
    }
  }

  io::ResultsFile rf;
  rf.category_name = sf.category_name;
  rf.solver = {{"restarts", opt.restarts},
               {"max_iters", opt.max_iters},
               {"seed", opt.seed},
               {"targets", opt.use_clean ? "clean" : "noisy"}};
  make_dir(opt.out);
  if (sf.scenes.empty()) {
    err << "warning: " << opt.scenes.string() << " contains no scenes\n";
    io::save_json(opt.out / "results.json", io::to_json(rf));
    return 0;
  }

  const std::size_t n = sf.scenes.size();
  std::vector<io::SceneFit> fits(n);
  std::vector<double> seconds(n, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const Scene& s = sf.scenes[i];
      io::SceneFit& r = fits[i];
      r.scene_id = s.scene_id;
      r.instance_id = s.instance_id;
      SolverConfig cfg;
      cfg.restarts = opt.restarts;
      cfg.max_iters = opt.max_iters;
      cfg.seed = opt.seed + static_cast<std::uint64_t>(s.scene_id);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const FitResult f = fit({&prior, opt.use_clean ? s.targets_clean : s.targets_noisy, std::nullopt}, cfg);
        r.beta = f.beta;
        r.states.assign(f.states.begin(), f.states.end());
        r.residual = f.residual;
        r.energy = f.energy;
        r.iterations = f.iterations;
        r.converged = f.converged;
        r.restarts_used = f.restarts_used;
      } catch (const OptimizationFailure&) {
        r.beta = VecX();
        r.states.assign(static_cast<std::size_t>(prior.tree.joint_count()), std::nullopt);
        r.residual = std::nan("");
        r.energy = std::nan("");
        r.restarts_used = cfg.restarts;
      } catch (...) {
        const std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  std::vector<std::thread> pool;
  const int threads = thread_budget(n);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  rf.results = fits;
  std::sort(rf.results.begin(), rf.results.end(),
            [](const io::SceneFit& a, const io::SceneFit& b) { return a.scene_id < b.scene_id; });
  io::save_json(opt.out / "results.json", io::to_json(rf));

  double residual_sum = 0.0, time_sum = 0.0;
  int failed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const io::SceneFit& r = fits[i];
    time_sum += seconds[i];
    if (std::isfinite(r.residual)) {
      residual_sum += r.residual;
      out << "scene " << r.scene_id << ": residual " << brief(r.residual) << ", " << r.iterations
          << " iterations, " << brief(seconds[i]) << " s\n";
    } else {
      ++failed;
      out << "scene " << r.scene_id << ": no finite fit, " << brief(seconds[i]) << " s\n";
    }
  }
  const int ok = static_cast<int>(n) - failed;
  out << "fitted " << n << " scenes on " << threads << " thread(s): mean residual "
      << (ok > 0 ? brief(residual_sum / ok) : std::string("n/a")) << ", mean wall-clock "
      << brief(time_sum / static_cast<double>(n)) << " s/scene";
  if (failed > 0) out << ", " << failed << " failed";
  out << "\n";
  return 0;
}

namespace {

struct JointRow {
  int scene_id = 0;
  int joint_id = 0;
  JointType type = JointType::Revolute;
  double state_err = 0.0;
  std::optional<double> axis_angle_err;
  std::optional<double> axis_dist_err;
};

// Camera-space axis of a predicted joint, if every state it depends on was fitted.
std::optional<JointAxisLine> predicted_axis(const OmadPrior& prior, const io::SceneFit& r, int joint) {
  if (r.beta.size() != prior.basis_count()) return std::nullopt;
  const KinematicTree& tree = prior.tree;
  JointStateSet states = rest_states(tree);
  for (int j : tree.chain(tree.joint(joint).parent)) {
    const auto& s = r.states[static_cast<std::size_t>(j)];
    if (!s) return std::nullopt;
    states[static_cast<std::size_t>(j)] = *s;
  }
  try {
    return axis_to_camera(prior, r.beta, states, joint);
  } catch (const DegenerateDirection&) {
    return std::nullopt;
  }
}

struct Mean {
  double sum = 0.0;
  int count = 0;
  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++count;
    }
  }
  json value() const { return count > 0 ? json(sum / count) : json(nullptr); }
};

}  // namespace

int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& /*err*/) {
  const io::ResultsFile rf = io::results_from_json(io::load_json(opt.results));
  const io::SceneFile sf = io::scenes_from_json(io::load_json(opt.scenes));
  const OmadPrior prior = io::prior_from_json(io::load_json(opt.prior));
  const OmadPrior prior_gt = opt.prior_gt ? io::prior_from_json(io::load_json(*opt.prior_gt)) : prior;
  const KinematicTree& tree = prior_gt.tree;

  std::map<int, const Scene*> by_id;
  for (const Scene& s : sf.scenes) by_id[s.scene_id] = &s;
  if (rf.results.size() != sf.scenes.size() || by_id.size() != sf.scenes.size()) {
    throw ContractViolation("results and scenes are misaligned: " + std::to_string(rf.results.size()) +
                            " results for " + std::to_string(sf.scenes.size()) + " scenes");
  }
  if (prior.tree.joint_count() != tree.joint_count()) {
    throw ContractViolation("fitting prior and ground-truth prior disagree on the joint count");
  }

  std::vector<JointRow> rows;
  for (const io::SceneFit& r : rf.results) {
    const auto it = by_id.find(r.scene_id);
    if (it == by_id.end()) {
      throw ContractViolation("results and scenes are misaligned: no scene " + std::to_string(r.scene_id));
    }
    const Scene& s = *it->second;
    if (static_cast<int>(r.states.size()) != tree.joint_count()) {
      throw ContractViolation("scene " + std::to_string(r.scene_id) + " result has the wrong joint count");
    }
    for (int j : tree.dof1_joints()) {
      JointRow row;
      row.scene_id = r.scene_id;
      row.joint_id = j;
      row.type = tree.joint(j).type;
      row.state_err = joint_state_error(r.states[static_cast<std::size_t>(j)],
                                        s.states_star[static_cast<std::size_t>(j)]);
      if (const auto pred = predicted_axis(prior, r, j)) {
        const JointAxisLine gt = axis_to_camera(prior_gt, s.beta_star, s.states_star, j);
        row.axis_angle_err = joint_axis_angle_error(*pred, gt);
        if (row.type == JointType::Revolute) row.axis_dist_err = joint_axis_distance_error(*pred, gt);
      }
      rows.push_back(row);
    }
  }
  std::sort(rows.begin(), rows.end(), [](const JointRow& a, const JointRow& b) {
    return std::tie(a.scene_id, a.joint_id) < std::tie(b.scene_id, b.joint_id);
  });

  std::ostringstream csv;
  csv << "scene_id,joint_id,state_err,axis_angle_err,axis_dist_err\n";
  for (const JointRow& r : rows) {
    csv << r.scene_id << ',' << r.joint_id << ',' << num(r.state_err) << ','
        << (r.axis_angle_err ? num(*r.axis_angle_err) : "") << ',' << (r.axis_dist_err ? num(*r.axis_dist_err) : "")
        << '\n';
  }

  json per_scene = json::array();
  std::map<int, std::array<Mean, 3>> per_joint;
  Mean rev_state, pri_state, angle, dist;
  for (std::size_t i = 0; i < rows.size();) {
    json joints = json::array();
    const int sid = rows[i].scene_id;
    for (; i < rows.size() && rows[i].scene_id == sid; ++i) {
      const JointRow& r = rows[i];
      joints.push_back({{"joint_id", r.joint_id},
                        {"type", to_string(r.type)},
                        {"state_err", r.state_err},
                        {"axis_angle_err", optional_number(r.axis_angle_err)},
                        {"axis_dist_err", optional_number(r.axis_dist_err)}});
      auto& pj = per_joint[r.joint_id];
      pj[0].add(r.state_err);
      pj[1].add(r.axis_angle_err);
      pj[2].add(r.axis_dist_err);
      (r.type == JointType::Revolute ? rev_state : pri_state).add(r.state_err);
      angle.add(r.axis_angle_err);
      dist.add(r.axis_dist_err);
    }
    per_scene.push_back({{"scene_id", sid}, {"joints", joints}});
  }
  json per_joint_mean = json::array();
  for (const auto& [j, m] : per_joint) {
    per_joint_mean.push_back({{"joint_id", j},
                              {"type", to_string(tree.joint(j).type)},
                              {"state_err", m[0].value()},
                              {"axis_angle_err", m[1].value()},
                              {"axis_dist_err", m[2].value()},
                              {"count", m[0].count}});
  }
  const json metrics = {{"format_version", io::kFormatVersion},
                        {"category_name", rf.category_name},
                        {"per_scene", per_scene},
                        {"per_joint_mean", per_joint_mean},
                        {"mean",
                         {{"scenes", rf.results.size()},
                          {"revolute_state_err_deg", rev_state.value()},
                          {"prismatic_state_err", pri_state.value()},
                          {"axis_angle_err_deg", angle.value()},
                          {"revolute_axis_dist_err", dist.value()}}}};

  make_dir(opt.out);
  io::save_text(opt.out / "metrics.csv", csv.str());
  io::save_json(opt.out / "metrics.json", metrics);

  auto show = [](const Mean& m) { return m.count > 0 ? brief(m.sum / m.count) : std::string("n/a"); };
  out << "evaluated " << rf.results.size() << " scenes: revolute state error " << show(rev_state)
      << " deg, prismatic state error " << show(pri_state) << ", axis angle error " << show(angle)
      << " deg, axis distance error " << show(dist) << "\n";
  return 0;
}

int cmd_retrieve(const RetrieveOptions& opt, std::ostream& out, std::ostream& /*err*/) {
  const io::ResultsFile queries = io::results_from_json(io::load_json(opt.results_query));
  const io::ResultsFile db = io::results_from_json(io::load_json(opt.results_db));

  auto item_of = [](const io::SceneFit& r, const fs::path& file) {
    if (!r.instance_id) {
      throw ContractViolation("scene " + std::to_string(r.scene_id) + " in '" + file.string() +
                              "' has no instance label");
    }
    if (r.beta.size() == 0) {
      throw ContractViolation("scene " + std::to_string(r.scene_id) + " in '" + file.string() +
                              "' has no fitted shape");
    }
    return RetrievalItem{r.beta, std::to_string(*r.instance_id)};
  };

  std::vector<RetrievalItem> items;
  for (const io::SceneFit& r : db.results) items.push_back(item_of(r, opt.results_db));
  std::vector<RetrievalRecord> records;
  for (const io::SceneFit& q : queries.results) {
    const RetrievalItem qi = item_of(q, opt.results_query);
    RetrievalRecord rec{qi.beta, qi.label, {}};
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (opt.leave_one_out && db.results[i].scene_id == q.scene_id) continue;
      rec.database.push_back(items[i]);
    }
    records.push_back(std::move(rec));
  }
  const double map = retrieval_map(records, opt.top_k);

  std::ostringstream csv;
  const Eigen::Index K = items.empty() ? 0 : items.front().beta.size();
  csv << "set,scene_id,label";
  for (Eigen::Index k = 0; k < K; ++k) csv << ",beta_" << k;
  csv << '\n';
  auto dump = [&](const char* set, const io::ResultsFile& f) {
    for (const io::SceneFit& r : f.results) {
      csv << set << ',' << r.scene_id << ',' << *r.instance_id;
      for (Eigen::Index k = 0; k < r.beta.size(); ++k) csv << ',' << num(r.beta(k));
      csv << '\n';
    }
  };
  dump("query", queries);
  dump("db", db);
  make_dir(opt.out);
  io::save_text(opt.out / "beta_dump.csv", csv.str());

  out << "mAP@" << opt.top_k << " over " << records.size() << " queries: " << num(map) << "\n";
  return 0;
}

}  // namespace omad::cli
