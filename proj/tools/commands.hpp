#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>

namespace omad::cli {

struct GenOptions {
  std::string category;
  int n_instances = 20;
  int n_scenes = 100;
  double noise = 0.0;
  bool noise_relative = false;  // noise is a fraction of the data diameter
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  int keypoints_per_part = 4;
  int basis_count_true = 3;
  std::pair<double, double> revolute_deg{15.0, 165.0};
  std::pair<double, double> prismatic{0.0, 0.3};
};

struct LearnOptions {
  std::filesystem::path trainset;
  int k_basis = 3;
  int hidden = 64;
  int epochs = 2000;
  double lr = 1e-2;
  double lambda = 1.0;
  double reg_weight = 1e-3;
  double sep_margin = 0.0;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct FitOptions {
  std::filesystem::path prior;
  std::filesystem::path scenes;
  int restarts = 16;
  int max_iters = 200;
  bool use_clean = false;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};

struct EvalOptions {
  std::filesystem::path results;
  std::filesystem::path scenes;
  std::filesystem::path prior;
  std::optional<std::filesystem::path> prior_gt;  // defaults to `prior`
  std::filesystem::path out;
};

struct RetrieveOptions {
  std::filesystem::path results_query;
  std::filesystem::path results_db;
  int top_k = 10;
  bool leave_one_out = false;
  std::filesystem::path out;
};

/// Each command returns the process exit status and reports through the
/// given streams. Data and I/O problems surface as exceptions.
int cmd_gen(const GenOptions& opt, std::ostream& out, std::ostream& err);
int cmd_learn_prior(const LearnOptions& opt, std::ostream& out, std::ostream& err);
int cmd_fit(const FitOptions& opt, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& opt, std::ostream& out, std::ostream& err);
int cmd_retrieve(const RetrieveOptions& opt, std::ostream& out, std::ostream& err);

/// Parses argv, dispatches to a command and maps failures to exit codes:
/// 0 success, 1 runtime or data error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace omad::cli
