#include <CLI11.hpp>

#include <exception>
#include <string>
#include <vector>

#include "commands.hpp"
#include "omad/datagen.hpp"

namespace omad::cli {

namespace {

std::vector<std::string> category_names() {
  std::vector<std::string> names;
  for (CategoryTemplate t : all_categories()) names.emplace_back(to_string(t));
  return names;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Articulated-object keypoint models: generate, learn, fit, evaluate", "omad"};
  app.set_version_flag("--version", "omad 0.1.0");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic category, training set and scenes");
  gen_cmd->add_option("--category", gen.category, "Category template")
      ->required()
      ->check(CLI::IsMember(category_names()));
  gen_cmd->add_option("--n-instances", gen.n_instances, "Training instances")->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--n-scenes", gen.n_scenes, "Scenes to sample")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--noise", gen.noise, "Keypoint noise sigma (length units)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_flag("--noise-relative", gen.noise_relative, "Interpret --noise as a fraction of the data diameter");
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->required();
  gen_cmd->add_option("--out-dir", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--keypoints-per-part", gen.keypoints_per_part, "Box corners per part")
      ->capture_default_str()
      ->check(CLI::Range(1, 8));
  gen_cmd->add_option("--k-basis-true", gen.basis_count_true, "Rank of the generating shape basis")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  gen_cmd->add_option("--revolute-deg", gen.revolute_deg, "Revolute state range in degrees (LO HI)")
      ->capture_default_str();
  gen_cmd->add_option("--prismatic", gen.prismatic, "Prismatic state range (LO HI)")->capture_default_str();

  LearnOptions learn;
  CLI::App* learn_cmd = app.add_subcommand("learn-prior", "Learn a shape basis and joint function");
  learn_cmd->add_option("--trainset", learn.trainset, "trainset.json")->required()->check(CLI::ExistingFile);
  learn_cmd->add_option("--k-basis", learn.k_basis, "Basis size")->capture_default_str()->check(CLI::PositiveNumber);
  learn_cmd->add_option("--hidden", learn.hidden, "Joint-function hidden width")->capture_default_str()
      ->check(CLI::PositiveNumber);
  learn_cmd->add_option("--epochs", learn.epochs, "Gradient epochs")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  learn_cmd->add_option("--lr", learn.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  learn_cmd->add_option("--lambda", learn.lambda, "Pivot weight of the joint loss")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  learn_cmd->add_option("--reg-weight", learn.reg_weight, "Weight of the beta L2 term")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  learn_cmd->add_option("--sep-margin", learn.sep_margin, "Separation margin; 0 uses 5% of the diameter")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  learn_cmd->add_option("--seed", learn.seed, "Random seed")->required();
  learn_cmd->add_option("--out", learn.out, "Output directory")->required();

  FitOptions fit;
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit shape and joint states to scene keypoints");
  fit_cmd->add_option("--prior", fit.prior, "Prior JSON")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--scenes", fit.scenes, "scenes.json")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("--restarts", fit.restarts, "Solver starts per scene")->capture_default_str()
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--max-iters", fit.max_iters, "Iterations per start")->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  auto* clean = fit_cmd->add_flag("--use-clean", fit.use_clean, "Fit the noise-free targets");
  bool use_noisy = false;
  fit_cmd->add_flag("--use-noisy", use_noisy, "Fit the noisy targets (default)")->excludes(clean);
  fit_cmd->add_option("--seed", fit.seed, "Random seed")->required();
  fit_cmd->add_option("--out", fit.out, "Output directory")->required();

  EvalOptions eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score fitted joints against ground truth");
  eval_cmd->add_option("--results", eval.results, "results.json")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--scenes", eval.scenes, "scenes.json")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--prior", eval.prior, "Prior used for fitting")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--prior-gt", eval.prior_gt, "Generating prior for ground-truth axes (default: --prior)")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();

  RetrieveOptions retrieve;
  CLI::App* retrieve_cmd = app.add_subcommand("retrieve", "Instance retrieval by shape-parameter distance");
  retrieve_cmd->add_option("--results-query", retrieve.results_query, "Query results.json")->required()
      ->check(CLI::ExistingFile);
  retrieve_cmd->add_option("--results-db", retrieve.results_db, "Database results.json")->required()
      ->check(CLI::ExistingFile);
  retrieve_cmd->add_option("--top-k", retrieve.top_k, "Ranks scored per query")->capture_default_str()
      ->check(CLI::PositiveNumber);
  retrieve_cmd->add_flag("--leave-one-out", retrieve.leave_one_out,
                         "Skip database entries with the query's scene_id");
  retrieve_cmd->add_option("--out", retrieve.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const std::vector<CLI::App*> subs = app.get_subcommands();
    err << "error: " << e.what() << "\n\n" << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen, out, err);
    if (learn_cmd->parsed()) return cmd_learn_prior(learn, out, err);
    if (fit_cmd->parsed()) return cmd_fit(fit, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval, out, err);
    if (retrieve_cmd->parsed()) return cmd_retrieve(retrieve, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace omad::cli
