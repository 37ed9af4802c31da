#pragma once

// Run configuration and the restartable on-disk pipeline stages:
// phantom -> preprocess -> augment / features -> train-cnn / train-gbm ->
// select-ensemble -> predict -> evaluate.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesionkit/augment.hpp"
#include "lesionkit/gbm.hpp"
#include "lesionkit/phantom.hpp"
#include "lesionkit/preprocess.hpp"
#include "lesionkit/xmasnet.hpp"

namespace lesionkit::pipeline {

/// Configuration mistakes (unknown keys, wrong types); the CLI maps these to
/// the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ViewPlan {
  std::string mode = "random";  // "random" or "grid"
  int per_orientation = 8;      // random
  int rotations = 4;            // grid
  int shears = 3;               // grid

  std::vector<augment::ViewSpec> views(std::uint64_t seed) const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int jobs = 1;

  struct Data {
    std::string cases_dir;  // empty: the phantom stage output
    std::string findings_csv;
    std::string exclusion_list;
  } data;

  phantom::PhantomSpec phantom;

  struct Preprocess {
    double isotropic_spacing = 1.0;
    double val_fraction = 0.25;
    preprocess::GrowParams grow;
  } preprocess;

  struct Augment {
    std::vector<std::string> channel_sets{"DAK", "DAT", "AKT", "DKT"};
    ViewPlan train_views;
    ViewPlan val_views{"random", 2, 1, 1};
  } augment;

  struct Features {
    int gray_levels = 32;
  } features;

  struct Cnn {
    int replicas = 1;  // nets per channel set, differing in seed
    xmasnet::TrainConfig train;
  } cnn;

  struct Gbm {
    gbm::ZooSpec zoo;
    int top_models = 20;
  } gbm;

  struct Ensemble {
    int max_iters = 100;
    int patience = 5;
  } ensemble;

  /// Missing keys keep their defaults; unknown keys raise ConfigError.
  /// Relative data paths are resolved against `base_dir`.
  static RunConfig from_json(const std::string& text, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical form: every key, fixed order.
  std::string to_json() const;
  void validate() const;
};

/// Independent stream per purpose: first 8 bytes of sha256("<seed>:<tag>").
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

enum class Stage { Phantom, Preprocess, Augment, Features, TrainCnn, TrainGbm, SelectEnsemble, Predict, Evaluate };

const char* stage_name(Stage s);  // the CLI subcommand spelling
std::filesystem::path stage_dir(const std::filesystem::path& out, Stage s);

struct StageResult {
  bool skipped = false;  // inputs, config and outputs matched the previous run
  std::vector<std::string> lines;  // human-readable summary
};

/// Runs one stage under `out`. A stage re-run with the same inputs and
/// config leaves every byte untouched. Each run writes
/// `<out>/<stage>/run_manifest.json`.
StageResult run_stage(Stage s, const RunConfig& cfg, const std::filesystem::path& out);

/// All stages in order (phantom only when no external data is configured).
std::vector<StageResult> run_all(const RunConfig& cfg, const std::filesystem::path& out);

struct EvalReport {
  std::string name;
  double auc = 0.0;
  int lesions = 0;
};

/// Lesion-level evaluation of a predictions CSV (view predictions, any number
/// of models) against labelled findings. Writes roc.csv per model and one
/// roc.svg into `out_dir`.
std::vector<EvalReport> evaluate_predictions(const std::filesystem::path& predictions_csv,
                                             const std::filesystem::path& findings_csv,
                                             const std::filesystem::path& out_dir);

/// ROC SVG for several prediction files (every model in each file).
void roc_plot(const std::vector<std::filesystem::path>& predictions, const std::filesystem::path& findings_csv,
              const std::filesystem::path& svg_path);

}  // namespace lesionkit::pipeline
