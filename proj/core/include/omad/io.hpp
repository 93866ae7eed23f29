#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omad/datagen.hpp"
#include "omad/estimator.hpp"
#include "omad/omad_model.hpp"
#include "omad/prior_learning.hpp"

namespace omad::io {

using nlohmann::json;

constexpr int kFormatVersion = 1;

/// Schema or version problem in an input document.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable file or malformed JSON; for parse errors `byte()` is the
/// offset reported by the parser.
class ReadError : public std::runtime_error {
 public:
  ReadError(const std::string& what, std::optional<std::size_t> byte = std::nullopt)
      : std::runtime_error(what), byte_(byte) {}
  std::optional<std::size_t> byte() const { return byte_; }

 private:
  std::optional<std::size_t> byte_;
};

json load_json(const std::filesystem::path& path);
/// Writes `doc` with a trailing newline. Output is a pure function of `doc`.
void save_json(const std::filesystem::path& path, const json& doc);
void save_text(const std::filesystem::path& path, const std::string& text);

json to_json(const KinematicTree& tree);
KinematicTree tree_from_json(const json& j);

json to_json(const JointState& s);
JointState state_from_json(const json& j);

json to_json(const OmadPrior& prior);
OmadPrior prior_from_json(const json& j);

struct TrainingSetFile {
  std::string category_name;
  json generator = json::object();  // provenance, stored verbatim
  TrainingSet train;
};

json to_json(const TrainingSetFile& f);
TrainingSetFile trainset_from_json(const json& j);

struct SceneFile {
  std::string category_name;
  json generator = json::object();
  std::vector<Scene> scenes;
};

json to_json(const SceneFile& f);
SceneFile scenes_from_json(const json& j);

/// One fitted scene. A missing joint state means the fit did not produce it.
struct SceneFit {
  int scene_id = 0;
  std::optional<int> instance_id;
  VecX beta;
  std::vector<std::optional<JointState>> states;
  double residual = 0.0;
  double energy = 0.0;
  int iterations = 0;
  bool converged = false;
  int restarts_used = 0;
};

struct ResultsFile {
  std::string category_name;
  json solver = json::object();
  std::vector<SceneFit> results;
};

json to_json(const ResultsFile& f);
ResultsFile results_from_json(const json& j);

}  // namespace omad::io
