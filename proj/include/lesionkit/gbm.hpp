#pragma once

// Gradient-boosted decision trees on logistic loss with exact greedy split
// search, stratified k-fold CV, backward feature selection and a small
// hyperparameter-grid model zoo.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lesionkit::gbm {

/// Dense row-major N x F matrix.
struct FeatureMatrix {
  int rows = 0, cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }

  FeatureMatrix select_rows(std::span<const int> idx) const;
  FeatureMatrix select_cols(std::span<const int> idx) const;
};

struct BoostConfig {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double l2_lambda = 1.0;
  double min_child_hessian = 1e-3;
  double subsample = 1.0;
  std::uint64_t seed = 0;

  void validate() const;  // InvalidArgument
};

/// Flat tree; node 0 is the root. Samples with x < threshold go left, NaN
/// follows default_left.
struct TreeNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1;
  bool default_left = true;
  double weight = 0.0;  // leaves only, before the learning rate
  double gain = 0.0;    // splits only
};

struct Tree {
  std::vector<TreeNode> nodes;
  double output(std::span<const double> row) const;
  int depth() const;
};

struct BoostedModel {
  double base_score = 0.0;  // log-odds
  BoostConfig config;
  std::vector<Tree> trees;
  std::vector<std::string> features;  // column names the model consumes, in order

  double margin(std::span<const double> row) const;
};

double leaf_weight(double G, double H, double lambda);
/// 0.5 * [GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)]
double split_gain(double GL, double HL, double GR, double HR, double lambda);

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Best split of `rows` under (g, h): maximal gain, ties to the lower feature
/// index and then the lower threshold. Only candidates with positive gain and
/// both children at or above min_child_hessian qualify.
SplitChoice best_split(const FeatureMatrix& x, std::span<const double> g, std::span<const double> h,
                       std::span<const int> rows, double lambda, double min_child_hessian);

/// One tree grown greedily from gradient statistics.
Tree grow_tree(const FeatureMatrix& x, std::span<const double> g, std::span<const double> h,
               std::span<const int> rows, const BoostConfig& cfg);

/// Mean logistic loss of margins against 0/1 labels.
double logistic_loss(std::span<const double> margins, std::span<const int> labels);

/// Single-class labels give a tree-less model at the (clamped) prior log-odds.
/// `loss_trace`, when given, receives the training loss after each round
/// (entry 0 is the loss of the base score alone).
BoostedModel fit(const FeatureMatrix& x, std::span<const int> labels, const BoostConfig& cfg,
                 const std::vector<std::string>& names = {}, std::vector<double>* loss_trace = nullptr);

/// Columns must match model.features one to one (FeatureCountMismatch).
std::vector<double> predict_proba(const BoostedModel& model, const FeatureMatrix& x);
/// Columns are located by name, so any superset in any order works.
std::vector<double> predict_proba(const BoostedModel& model, const FeatureMatrix& x,
                                  const std::vector<std::string>& names);

struct CvResult {
  std::vector<double> fold_aucs;
  double mean_auc = 0.0;
  std::vector<int> fold_of;       // per sample
  std::vector<double> oof_proba;  // out-of-fold predictions
  std::vector<int> used_features;  // columns split on by any fold model, ascending
};

/// Stratified fold assignment: each class is shuffled with `seed` and dealt
/// round-robin. TooFewSamples when a class has fewer than k members.
std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

CvResult kfold_cv(const FeatureMatrix& x, std::span<const int> labels, const BoostConfig& cfg, int k = 5,
                  std::uint64_t seed = 0, int jobs = 1);

struct EliminationStep {
  int removed = -1;  // column index in the original matrix
  double mean_auc = 0.0;
};

struct SelectionResult {
  double initial_auc = 0.0;
  std::vector<EliminationStep> trace;
  std::vector<int> best_subset;  // ascending column indices
  double best_auc = 0.0;
};

/// Repeatedly drops the column whose removal gives the highest mean CV AUC
/// (ties to the lowest index) until min_features remain.
SelectionResult backward_feature_selection(const FeatureMatrix& x, std::span<const int> labels,
                                           const BoostConfig& cfg, int min_features, int k = 5,
                                           std::uint64_t cv_seed = 0, int jobs = 1);

struct ZooSpec {
  std::vector<int> depths{2, 3, 4};
  std::vector<double> learning_rates{0.05, 0.1, 0.3};
  std::vector<double> lambdas{1.0, 5.0};
  std::vector<std::uint64_t> seeds{0};
  int n_trees = 100;
  double min_child_hessian = 1e-3;
  double subsample = 1.0;
  int folds = 5;
  bool select_features = true;
  int min_features = 1;

  void validate() const;
};

struct ZooEntry {
  std::string model_id;
  BoostConfig config;
  std::vector<std::string> selected;
  double mean_cv_auc = 0.0;
  BoostedModel model;  // refit on all rows with the selected columns
};

/// Grid x seeds, each with its own selection and CV; entries in grid order.
std::vector<ZooEntry> run_zoo(const FeatureMatrix& x, std::span<const int> labels,
                              const std::vector<std::string>& names, const ZooSpec& spec, int jobs = 1);

/// Indices of the `top` best entries by mean CV AUC (ties to the earlier entry).
std::vector<int> top_models(const std::vector<ZooEntry>& zoo, int top);

void save_model(const BoostedModel& model, const std::filesystem::path& path);
BoostedModel load_model(const std::filesystem::path& path);
void write_zoo_csv(const std::vector<ZooEntry>& zoo, const std::filesystem::path& path);

}  // namespace lesionkit::gbm
