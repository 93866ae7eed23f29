#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "commands.hpp"
#include "omad/evalkit.hpp"
#include "omad/io.hpp"

namespace omad {
namespace {

namespace fs = std::filesystem;
using io::json;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun omad_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "omad");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliRun r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("omad_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path gen(const std::string& name, std::vector<std::string> extra = {}) {
    const fs::path out = dir_ / name;
    std::vector<std::string> args = {"gen", "--category", "hinge2", "--n-instances", "10", "--n-scenes", "20",
                                     "--seed", "7", "--out-dir", out.string()};
    for (auto& e : extra) args.push_back(e);
    const CliRun r = omad_cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return out;
  }

  std::string p(const fs::path& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

TEST_F(CliTest, GenWritesThreeDeterministicFiles) {
  const fs::path a = gen("a");
  const fs::path b = gen("b");
  for (const char* f : {"prior_gt.json", "trainset.json", "scenes.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const json doc = io::load_json(a / "scenes.json");
  EXPECT_EQ(doc["generator"]["seed"], 7);
  EXPECT_EQ(doc["format_version"], io::kFormatVersion);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  CliRun r = omad_cli({"gen", "--n-scenes", "3", "--seed", "1", "--out-dir", p("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--category"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(omad_cli({"gen", "--category", "toaster", "--seed", "1", "--out-dir", p("x")}).code, 2);
  EXPECT_EQ(omad_cli({"gen", "--category", "hinge2", "--out-dir", p("x")}).code, 2);
  EXPECT_EQ(omad_cli({}).code, 2);
  EXPECT_EQ(omad_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(omad_cli({"--help"}).code, 0);
}

TEST_F(CliTest, LearnPriorReportsExactReconstructionOnRankThreeData) {
  const fs::path data = gen("data");
  const CliRun r = omad_cli({"learn-prior", "--trainset", (data / "trainset.json").string(), "--k-basis", "3",
                          "--epochs", "50", "--seed", "1", "--out", p("learned")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string key = "reconstruction error: ";
  const auto pos = r.out.find(key);
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(pos + key.size())), 1e-8);
  EXPECT_EQ(lines(slurp(dir_ / "learned" / "loss_history.csv")).size(), 51u + 1u);
  const OmadPrior learned = io::prior_from_json(io::load_json(dir_ / "learned" / "prior_learned.json"));
  EXPECT_EQ(learned.basis_count(), 3);
  EXPECT_EQ(learned.category_name, "hinge2");
}

TEST_F(CliTest, LearnPriorZeroEpochs) {
  const fs::path data = gen("data");
  const CliRun r = omad_cli({"learn-prior", "--trainset", (data / "trainset.json").string(), "--epochs", "0",
                          "--seed", "1", "--out", p("learned")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = lines(slurp(dir_ / "learned" / "loss_history.csv"));
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[0], "epoch,l_dir,l_pivot,l_joint,total");
  const OmadPrior learned = io::prior_from_json(io::load_json(dir_ / "learned" / "prior_learned.json"));
  const JointFunctionWeights init = init_joint_function(3, 64, 6, 1);
  EXPECT_EQ(learned.gamma.W1, init.W1);
  EXPECT_EQ(learned.gamma.W2, init.W2);
}

TEST_F(CliTest, LearnPriorRejectsBasisAboveRankBound) {
  const fs::path data = gen("data");
  const CliRun r = omad_cli({"learn-prior", "--trainset", (data / "trainset.json").string(), "--k-basis", "11",
                          "--seed", "1", "--out", p("learned")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("rank bound 10"), std::string::npos) << r.err;
}

TEST_F(CliTest, CorruptJsonNamesByteOffset) {
  io::save_text(dir_ / "bad.json", "{\"format_version\": 1, \"tree\": }");
  const CliRun r = omad_cli({"learn-prior", "--trainset", p("bad.json"), "--seed", "1", "--out", p("learned")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("at byte"), std::string::npos) << r.err;
}

TEST_F(CliTest, FitEmptySceneListWarns) {
  const fs::path data = gen("data", {"--n-scenes", "0"});
  const CliRun r = omad_cli({"fit", "--prior", (data / "prior_gt.json").string(), "--scenes",
                          (data / "scenes.json").string(), "--seed", "1", "--out", p("fit")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(io::results_from_json(io::load_json(dir_ / "fit" / "results.json")).results.empty());
}

TEST_F(CliTest, FitRejectsKeypointCountMismatch) {
  const fs::path four = gen("four");
  const fs::path three = gen("three", {"--keypoints-per-part", "3"});
  const CliRun r = omad_cli({"fit", "--prior", (four / "prior_gt.json").string(), "--scenes",
                          (three / "scenes.json").string(), "--seed", "1", "--out", p("fit")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("keypoints"), std::string::npos);
}

TEST_F(CliTest, FitIsDeterministicAcrossThreadCounts) {
  const fs::path data = gen("data", {"--noise", "0.01", "--noise-relative"});
  const std::vector<std::string> base = {"fit", "--prior", (data / "prior_gt.json").string(), "--scenes",
                                         (data / "scenes.json").string(), "--seed", "5", "--out"};
  auto with_threads = [&](const char* n, const std::string& out) {
    ::setenv("OMAD_THREADS", n, 1);
    std::vector<std::string> args = base;
    args.push_back(out);
    const CliRun r = omad_cli(args);
    ::unsetenv("OMAD_THREADS");
    return r;
  };
  const CliRun one = with_threads("1", p("f1"));
  const CliRun three = with_threads("3", p("f3"));
  ASSERT_EQ(one.code, 0) << one.err;
  ASSERT_EQ(three.code, 0) << three.err;
  EXPECT_EQ(slurp(dir_ / "f1" / "results.json"), slurp(dir_ / "f3" / "results.json"));
  EXPECT_NE(one.out.find("s/scene"), std::string::npos);
}

TEST_F(CliTest, FitCleanTargetsRecoverGroundTruth) {
  const fs::path data = gen("data");
  ASSERT_EQ(omad_cli({"fit", "--prior", (data / "prior_gt.json").string(), "--scenes",
                      (data / "scenes.json").string(), "--use-clean", "--seed", "1", "--out", p("fit")})
                .code,
            0);
  const io::ResultsFile rf = io::results_from_json(io::load_json(dir_ / "fit" / "results.json"));
  double sum = 0.0;
  for (const auto& r : rf.results) sum += r.residual;
  EXPECT_LT(sum / static_cast<double>(rf.results.size()), 1e-6);
}

TEST_F(CliTest, MoreRestartsNeverRecoverFewerScenes) {
  const fs::path data = gen("data", {"--n-scenes", "60", "--category", "hinge3"});
  auto successes = [&](const std::string& restarts) {
    const std::string out = p("fit" + restarts);
    EXPECT_EQ(omad_cli({"fit", "--prior", (data / "prior_gt.json").string(), "--scenes",
                        (data / "scenes.json").string(), "--use-clean", "--restarts", restarts, "--seed", "1",
                        "--out", out})
                  .code,
              0);
    int ok = 0;
    for (const auto& r : io::results_from_json(io::load_json(fs::path(out) / "results.json")).results) {
      ok += r.residual < 1e-6 ? 1 : 0;
    }
    return ok;
  };
  const int s1 = successes("1");
  const int s8 = successes("8");
  EXPECT_GE(s8, s1);
  EXPECT_GT(s8, 50);
}

io::ResultsFile ground_truth_results(const io::SceneFile& sf) {
  io::ResultsFile rf;
  rf.category_name = sf.category_name;
  for (const Scene& s : sf.scenes) {
    io::SceneFit f;
    f.scene_id = s.scene_id;
    f.instance_id = s.instance_id;
    f.beta = s.beta_star;
    f.states.assign(s.states_star.begin(), s.states_star.end());
    rf.results.push_back(f);
  }
  return rf;
}

TEST_F(CliTest, EvalOfGroundTruthIsZero) {
  const fs::path data = gen("data", {"--category", "slider4"});
  const io::SceneFile sf = io::scenes_from_json(io::load_json(data / "scenes.json"));
  io::save_json(dir_ / "gt.json", io::to_json(ground_truth_results(sf)));
  const CliRun r = omad_cli({"eval", "--results", p("gt.json"), "--scenes", (data / "scenes.json").string(), "--prior",
                          (data / "prior_gt.json").string(), "--out", p("eval")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = lines(slurp(dir_ / "eval" / "metrics.csv"));
  ASSERT_EQ(csv.size(), 1u + 20u * 3u);
  EXPECT_EQ(csv[0], "scene_id,joint_id,state_err,axis_angle_err,axis_dist_err");
  EXPECT_EQ(csv[1].back(), ',');  // prismatic rows leave the distance empty
  const json m = io::load_json(dir_ / "eval" / "metrics.json");
  EXPECT_EQ(m["mean"]["prismatic_state_err"].get<double>(), 0.0);
  EXPECT_LT(m["mean"]["axis_angle_err_deg"].get<double>(), 1e-6);
  EXPECT_TRUE(m["mean"]["revolute_state_err_deg"].is_null());
  EXPECT_EQ(m["per_scene"].size(), 20u);
  EXPECT_EQ(m["per_joint_mean"].size(), 3u);
}

TEST_F(CliTest, EvalChargesMissingJoints) {
  const fs::path data = gen("data");
  const io::SceneFile sf = io::scenes_from_json(io::load_json(data / "scenes.json"));
  io::ResultsFile rf = ground_truth_results(sf);
  rf.results[4].states[1] = std::nullopt;
  io::save_json(dir_ / "gt.json", io::to_json(rf));
  ASSERT_EQ(omad_cli({"eval", "--results", p("gt.json"), "--scenes", (data / "scenes.json").string(), "--prior",
                      (data / "prior_gt.json").string(), "--out", p("eval")})
                .code,
            0);
  const json m = io::load_json(dir_ / "eval" / "metrics.json");
  EXPECT_EQ(m["per_scene"][4]["joints"][0]["state_err"].get<double>(), 90.0);
  EXPECT_NEAR(m["mean"]["revolute_state_err_deg"].get<double>(), 90.0 / 20.0, 1e-9);
}

TEST_F(CliTest, EvalRejectsMisalignedInputs) {
  const fs::path data = gen("data");
  const io::SceneFile sf = io::scenes_from_json(io::load_json(data / "scenes.json"));
  io::ResultsFile rf = ground_truth_results(sf);
  rf.results.pop_back();
  io::save_json(dir_ / "short.json", io::to_json(rf));
  const CliRun r = omad_cli({"eval", "--results", p("short.json"), "--scenes", (data / "scenes.json").string(),
                          "--prior", (data / "prior_gt.json").string(), "--out", p("eval")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("misaligned"), std::string::npos);
}

TEST_F(CliTest, RetrieveSelfQueryAndDefaults) {
  const fs::path data = gen("data", {"--n-scenes", "10"});  // one scene per instance
  const io::SceneFile sf = io::scenes_from_json(io::load_json(data / "scenes.json"));
  io::save_json(dir_ / "gt.json", io::to_json(ground_truth_results(sf)));
  CliRun r = omad_cli({"retrieve", "--results-query", p("gt.json"), "--results-db", p("gt.json"), "--top-k", "1",
                    "--out", p("ret")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mAP@1 over 10 queries: 1\n"), std::string::npos) << r.out;
  r = omad_cli({"retrieve", "--results-query", p("gt.json"), "--results-db", p("gt.json"), "--out", p("ret")});
  EXPECT_NE(r.out.find("mAP@10"), std::string::npos);
  const auto dump = lines(slurp(dir_ / "ret" / "beta_dump.csv"));
  EXPECT_EQ(dump[0], "set,scene_id,label,beta_0,beta_1,beta_2");
  EXPECT_EQ(dump.size(), 21u);
}

TEST_F(CliTest, RetrieveNeedsLabels) {
  const fs::path data = gen("data", {"--n-scenes", "4"});
  io::ResultsFile rf = ground_truth_results(io::scenes_from_json(io::load_json(data / "scenes.json")));
  rf.results[2].instance_id.reset();
  io::save_json(dir_ / "nolabel.json", io::to_json(rf));
  const CliRun r = omad_cli({"retrieve", "--results-query", p("nolabel.json"), "--results-db", p("nolabel.json"),
                          "--out", p("ret")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("label"), std::string::npos);
}

double parse_map(const std::string& out) {
  const auto pos = out.find(": ");
  return std::stod(out.substr(pos + 2));
}

TEST_F(CliTest, ScrambledLabelsFallToChance) {
  const fs::path data = gen("data", {"--n-instances", "20", "--n-scenes", "200"});
  const io::SceneFile sf = io::scenes_from_json(io::load_json(data / "scenes.json"));
  io::ResultsFile rf = ground_truth_results(sf);
  io::save_json(dir_ / "gt.json", io::to_json(rf));
  const CliRun clean = omad_cli({"retrieve", "--results-query", p("gt.json"), "--results-db", p("gt.json"),
                              "--leave-one-out", "--out", p("ret")});
  ASSERT_EQ(clean.code, 0) << clean.err;
  EXPECT_EQ(parse_map(clean.out), 1.0);

  std::mt19937_64 rng(3);
  std::vector<int> labels;
  for (const auto& r : rf.results) labels.push_back(*r.instance_id);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < labels.size(); ++i) rf.results[i].instance_id = labels[i];
  io::save_json(dir_ / "scrambled.json", io::to_json(rf));
  const CliRun scrambled = omad_cli({"retrieve", "--results-query", p("scrambled.json"), "--results-db",
                                  p("scrambled.json"), "--leave-one-out", "--out", p("ret")});
  ASSERT_EQ(scrambled.code, 0);

  // Monte-Carlo baseline: the same label multiset under uniformly random rankings.
  double baseline = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    std::vector<RetrievalRecord> records;
    for (std::size_t q = 0; q < labels.size(); ++q) {
      RetrievalRecord rec{VecX::Zero(1), std::to_string(labels[q]), {}};
      std::vector<std::size_t> order;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i != q) order.push_back(i);
      }
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k = 0; k < order.size(); ++k) {
        VecX b(1);
        b << static_cast<double>(k + 1);
        rec.database.push_back({b, std::to_string(labels[order[k]])});
      }
      records.push_back(std::move(rec));
    }
    baseline += retrieval_map(records, 10);
  }
  baseline /= trials;
  EXPECT_NEAR(parse_map(scrambled.out), baseline, 0.05) << "baseline " << baseline;
  EXPECT_LT(parse_map(scrambled.out), 0.5);
}

}  // namespace
}  // namespace omad
