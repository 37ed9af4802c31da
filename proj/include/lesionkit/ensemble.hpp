#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lesionkit::ensemble {

/// Validation probabilities, one row per model and one column per lesion.
struct PredictionTable {
  std::vector<std::string> model_ids;
  std::vector<std::vector<double>> probs;  // [model][lesion]
  std::vector<int> labels;                 // [lesion]

  void validate() const;
};

struct EnsembleWeights {
  std::vector<std::string> model_ids;
  std::vector<int> counts;
  std::vector<double> weights;  // counts / sum(counts)
};

struct Selection {
  EnsembleWeights weights;
  /// Ensemble AUC after each accepted pick (the first entry is the seed model).
  std::vector<double> auc_trace;
  /// Model index chosen at each accepted pick.
  std::vector<int> picks;
};

inline constexpr double kConvergenceTol = 1e-6;

/// Greedy forward selection with replacement. Starts from the best single
/// model, then repeatedly adds the model whose extra copy maximizes ensemble
/// AUC (lowest index on ties). Stops after `patience` consecutive picks that
/// improve by less than kConvergenceTol, when no pick can keep the AUC, or
/// after `max_iters` picks.
Selection greedy_select(const PredictionTable& table, int max_iters = 100, int patience = 5);

/// Convex blend. `per_model` maps model id to its predictions; every id with a
/// nonzero weight must be present (UnknownModelId otherwise).
std::vector<double> ensemble_predict(const EnsembleWeights& weights,
                                     const std::map<std::string, std::vector<double>>& per_model);

struct ViewPrediction {
  std::string model_id;
  std::string case_id;
  int finding_id = 0;
  int view_index = 0;
  double probability = 0.0;
};

using FindingKey = std::pair<std::string, int>;

/// Mean over views per (case, finding); views are summed in view-index order.
std::map<FindingKey, double> multiview_average(const std::vector<ViewPrediction>& views);
/// Same, but every key in `expected` must have at least one view (EmptyGroup).
std::map<FindingKey, double> multiview_average(const std::vector<ViewPrediction>& views,
                                               const std::vector<FindingKey>& expected);

/// Builds the lesion-level table for the given labelled findings from
/// per-view predictions of several models.
PredictionTable build_table(const std::vector<ViewPrediction>& views, const std::map<FindingKey, int>& labels);

void write_predictions_csv(const std::vector<ViewPrediction>& views, const std::filesystem::path& path);
std::vector<ViewPrediction> read_predictions_csv(const std::filesystem::path& path);

void write_selection(const Selection& selection, const std::filesystem::path& path);
Selection read_selection(const std::filesystem::path& path);

}  // namespace lesionkit::ensemble
