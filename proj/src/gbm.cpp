#include "lesionkit/gbm.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <set>

#include "lesionkit/error.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::gbm {

namespace {

constexpr int kModelFormatVersion = 1;
constexpr double kPriorClamp = 1e-6;

double sigmoid(double m) { return m >= 0 ? 1.0 / (1.0 + std::exp(-m)) : std::exp(m) / (1.0 + std::exp(m)); }

void check_labels(std::span<const int> labels) {
  for (int y : labels)
    if (y != 0 && y != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
}

// Column-major copy of the features plus each column's row order, sorted by
// (value, row). Built once per fit; every tree level is one pass over it.
struct Columns {
  int n = 0, f = 0;
  std::vector<double> xt;  // [feature][row]
  std::vector<int> order;  // [feature][rank]
};

Columns make_columns(const FeatureMatrix& x) {
  Columns c;
  c.n = x.rows;
  c.f = x.cols;
  c.xt.resize(static_cast<std::size_t>(c.n) * c.f);
  c.order.resize(c.xt.size());
  for (int j = 0; j < c.f; ++j) {
    double* col = c.xt.data() + static_cast<std::size_t>(j) * c.n;
    for (int r = 0; r < c.n; ++r) col[r] = x(r, j);
    int* ord = c.order.data() + static_cast<std::size_t>(j) * c.n;
    for (int r = 0; r < c.n; ++r) ord[r] = r;
    std::sort(ord, ord + c.n, [&](int a, int b) { return col[a] < col[b] || (col[a] == col[b] && a < b); });
  }
  return c;
}

// Best split for every node in `active`, given each row's node (-1 = absent).
// Scanning features in order and thresholds upward with a strict comparison
// implements the tie-break.
std::vector<SplitChoice> scan_level(const Columns& c, std::span<const double> g, std::span<const double> h,
                                    std::span<const int> node_of, std::span<const int> active,
                                    std::span<const double> G, std::span<const double> H, double lambda,
                                    double min_child_hessian) {
  const std::size_t nodes = G.size();
  std::vector<SplitChoice> best(nodes);
  std::vector<char> open(nodes, 0);
  for (int q : active) open[q] = 1;
  std::vector<double> gl(nodes), hl(nodes), last(nodes);
  std::vector<int> cnt(nodes);
  for (int j = 0; j < c.f; ++j) {
    std::fill(gl.begin(), gl.end(), 0.0);
    std::fill(hl.begin(), hl.end(), 0.0);
    std::fill(cnt.begin(), cnt.end(), 0);
    const double* col = c.xt.data() + static_cast<std::size_t>(j) * c.n;
    const int* ord = c.order.data() + static_cast<std::size_t>(j) * c.n;
    for (int k = 0; k < c.n; ++k) {
      const int r = ord[k];
      const int q = node_of[r];
      if (q < 0 || !open[q]) continue;
      const double v = col[r];
      if (cnt[q] > 0 && last[q] < v) {
        const double hr = H[q] - hl[q];
        if (hl[q] >= min_child_hessian && hr >= min_child_hessian) {
          const double gain = split_gain(gl[q], hl[q], G[q] - gl[q], hr, lambda);
          if (gain > 0 && (!best[q].found || gain > best[q].gain)) {
            const double a = last[q];
            double thr = 0.5 * (a + v);
            if (!(a < thr && thr <= v)) thr = v;
            best[q] = {true, j, thr, gain};
          }
        }
      }
      gl[q] += g[r];
      hl[q] += h[r];
      last[q] = v;
      ++cnt[q];
    }
  }
  return best;
}

// Level-wise growth. node_of holds 0 for rows in the sample and -1 otherwise.
Tree grow_levels(const Columns& c, std::span<const double> g, std::span<const double> h, std::vector<int> node_of,
                 const BoostConfig& cfg) {
  Tree t;
  t.nodes.emplace_back();
  std::vector<int> active{0};
  for (int depth = 0; !active.empty(); ++depth) {
    std::vector<double> G(t.nodes.size(), 0.0), H(t.nodes.size(), 0.0);
    for (int r = 0; r < c.n; ++r) {
      const int q = node_of[r];
      if (q < 0) continue;
      G[q] += g[r];
      H[q] += h[r];
    }
    std::vector<SplitChoice> best(t.nodes.size());
    if (depth < cfg.max_depth) best = scan_level(c, g, h, node_of, active, G, H, cfg.l2_lambda, cfg.min_child_hessian);
    std::vector<int> next;
    for (int q : active) {
      if (!best[q].found) {
        t.nodes[q].weight = leaf_weight(G[q], H[q], cfg.l2_lambda);
        continue;
      }
      TreeNode node;
      node.leaf = false;
      node.feature = best[q].feature;
      node.threshold = best[q].threshold;
      node.gain = best[q].gain;
      node.left = static_cast<int>(t.nodes.size());
      node.right = node.left + 1;
      t.nodes[q] = node;
      t.nodes.emplace_back();
      t.nodes.emplace_back();
      next.push_back(node.left);
      next.push_back(node.right);
    }
    for (int r = 0; r < c.n; ++r) {
      const int q = node_of[r];
      if (q < 0 || t.nodes[q].leaf) continue;
      const auto& node = t.nodes[q];
      node_of[r] = c.xt[static_cast<std::size_t>(node.feature) * c.n + r] < node.threshold ? node.left : node.right;
    }
    active = std::move(next);
  }
  return t;
}

std::vector<int> membership(int n, std::span<const int> rows) {
  std::vector<int> node_of(n, -1);
  for (int r : rows) {
    if (r < 0 || r >= n) fail(ErrorCode::InvalidArgument, "row index out of range");
    node_of[r] = 0;
  }
  return node_of;
}

}  // namespace

FeatureMatrix FeatureMatrix::select_rows(std::span<const int> idx) const {
  FeatureMatrix m(static_cast<int>(idx.size()), cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(idx[i]) * cols, cols,
                m.data.begin() + static_cast<std::ptrdiff_t>(i) * cols);
  return m;
}

FeatureMatrix FeatureMatrix::select_cols(std::span<const int> idx) const {
  FeatureMatrix m(rows, static_cast<int>(idx.size()));
  for (int r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < idx.size(); ++c) m(r, static_cast<int>(c)) = (*this)(r, idx[c]);
  return m;
}

void BoostConfig::validate() const {
  if (n_trees < 1) fail(ErrorCode::InvalidArgument, "n_trees must be >= 1");
  if (max_depth < 0) fail(ErrorCode::InvalidArgument, "max_depth must be >= 0");
  if (!(learning_rate > 0 && learning_rate <= 1)) fail(ErrorCode::InvalidArgument, "learning_rate must lie in (0, 1]");
  if (!(l2_lambda >= 0)) fail(ErrorCode::InvalidArgument, "l2_lambda must be >= 0");
  if (!(min_child_hessian >= 0)) fail(ErrorCode::InvalidArgument, "min_child_hessian must be >= 0");
  if (!(subsample > 0 && subsample <= 1)) fail(ErrorCode::InvalidArgument, "subsample must lie in (0, 1]");
}

double Tree::output(std::span<const double> row) const {
  int n = 0;
  while (!nodes[n].leaf) {
    const auto& node = nodes[n];
    const double v = row[node.feature];
    n = std::isnan(v) ? (node.default_left ? node.left : node.right) : (v < node.threshold ? node.left : node.right);
  }
  return nodes[n].weight;
}

int Tree::depth() const {
  std::vector<int> d(nodes.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (!nodes[i].leaf) d[nodes[i].left] = d[nodes[i].right] = d[i] + 1;
  }
  return best;
}

double BoostedModel::margin(std::span<const double> row) const {
  double s = 0;
  for (const auto& t : trees) s += t.output(row);
  return base_score + config.learning_rate * s;
}

double leaf_weight(double G, double H, double lambda) {
  const double denom = H + lambda;
  return denom > 0 ? -G / denom : 0.0;
}

double split_gain(double GL, double HL, double GR, double HR, double lambda) {
  auto term = [&](double g, double hh) { return hh + lambda > 0 ? g * g / (hh + lambda) : 0.0; };
  return 0.5 * (term(GL, HL) + term(GR, HR) - term(GL + GR, HL + HR));
}

SplitChoice best_split(const FeatureMatrix& x, std::span<const double> g, std::span<const double> h,
                       std::span<const int> rows, double lambda, double min_child_hessian) {
  const auto node_of = membership(x.rows, rows);
  double G = 0, H = 0;
  for (int r = 0; r < x.rows; ++r)
    if (node_of[r] == 0) G += g[r], H += h[r];
  const std::vector<int> active{0};
  const std::vector<double> gs{G}, hs{H};
  return scan_level(make_columns(x), g, h, node_of, active, gs, hs, lambda, min_child_hessian)[0];
}

Tree grow_tree(const FeatureMatrix& x, std::span<const double> g, std::span<const double> h,
               std::span<const int> rows, const BoostConfig& cfg) {
  return grow_levels(make_columns(x), g, h, membership(x.rows, rows), cfg);
}

double logistic_loss(std::span<const double> margins, std::span<const int> labels) {
  double s = 0;
  for (std::size_t i = 0; i < margins.size(); ++i) {
    const double m = labels[i] ? -margins[i] : margins[i];
    // log(1 + exp(m)) without overflow
    s += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }
  return s / static_cast<double>(margins.size());
}

BoostedModel fit(const FeatureMatrix& x, std::span<const int> labels, const BoostConfig& cfg,
                 const std::vector<std::string>& names, std::vector<double>* loss_trace) {
  cfg.validate();
  const int n = x.rows;
  if (n < 4) fail(ErrorCode::TooFewSamples, "boosting needs at least 4 samples");
  if (static_cast<int>(labels.size()) != n) fail(ErrorCode::LengthMismatch, "labels do not match feature rows");
  if (!names.empty() && static_cast<int>(names.size()) != x.cols)
    fail(ErrorCode::FeatureCountMismatch, "feature names do not match columns");
  check_labels(labels);
  for (double v : x.data)
    if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite feature value");

  BoostedModel model;
  model.config = cfg;
  model.features = names;
  if (names.empty())
    for (int f = 0; f < x.cols; ++f) model.features.push_back("f" + std::to_string(f));

  int pos = 0;
  for (int y : labels) pos += y;
  const double prior = std::clamp(static_cast<double>(pos) / n, kPriorClamp, 1.0 - kPriorClamp);
  model.base_score = std::log(prior / (1.0 - prior));
  std::vector<double> margins(n, model.base_score);
  if (loss_trace) loss_trace->assign(1, logistic_loss(margins, labels));
  if (pos == 0 || pos == n) return model;

  const Columns cols = make_columns(x);
  std::vector<double> g(n), h(n);
  Rng rng(cfg.seed);
  const int take = std::max(2, static_cast<int>(std::lround(cfg.subsample * n)));
  std::vector<int> perm(n);
  for (int round = 0; round < cfg.n_trees; ++round) {
    for (int i = 0; i < n; ++i) {
      const double p = sigmoid(margins[i]);
      g[i] = p - labels[i];
      h[i] = p * (1.0 - p);
    }
    std::vector<int> node_of(n, 0);
    if (take < n) {
      for (int i = 0; i < n; ++i) perm[i] = i;
      rng.shuffle(perm);
      std::fill(node_of.begin(), node_of.end(), -1);
      for (int i = 0; i < take; ++i) node_of[perm[i]] = 0;
    }
    Tree tree = grow_levels(cols, g, h, std::move(node_of), cfg);
    for (int i = 0; i < n; ++i) {
      margins[i] += cfg.learning_rate *
                    tree.output(std::span<const double>(x.data.data() + static_cast<std::size_t>(i) * x.cols, x.cols));
    }
    model.trees.push_back(std::move(tree));
    if (loss_trace) loss_trace->push_back(logistic_loss(margins, labels));
  }
  return model;
}

std::vector<double> predict_proba(const BoostedModel& model, const FeatureMatrix& x) {
  if (x.cols != static_cast<int>(model.features.size())) {
    fail(ErrorCode::FeatureCountMismatch, "model expects " + std::to_string(model.features.size()) +
                                              " features, got " + std::to_string(x.cols));
  }
  std::vector<double> p(x.rows);
  for (int r = 0; r < x.rows; ++r) {
    p[r] = sigmoid(model.margin(std::span<const double>(x.data.data() + static_cast<std::size_t>(r) * x.cols, x.cols)));
  }
  return p;
}

std::vector<double> predict_proba(const BoostedModel& model, const FeatureMatrix& x,
                                  const std::vector<std::string>& names) {
  if (static_cast<int>(names.size()) != x.cols) fail(ErrorCode::FeatureCountMismatch, "names do not match columns");
  std::vector<int> cols;
  for (const auto& f : model.features) {
    const auto it = std::find(names.begin(), names.end(), f);
    if (it == names.end()) fail(ErrorCode::FeatureCountMismatch, "input lacks feature " + f);
    cols.push_back(static_cast<int>(it - names.begin()));
  }
  return predict_proba(model, x.select_cols(cols));
}

std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::InvalidArgument, "k must be >= 2");
  check_labels(labels);
  std::vector<int> fold(labels.size(), -1);
  Rng rng(seed);
  int dealt = 0;
  for (int c = 0; c <= 1; ++c) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(static_cast<int>(i));
    if (static_cast<int>(idx.size()) < k) {
      fail(ErrorCode::TooFewSamples, "class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                                         " samples, fewer than k=" + std::to_string(k));
    }
    rng.shuffle(idx);
    for (int i : idx) fold[i] = dealt++ % k;
  }
  return fold;
}

CvResult kfold_cv(const FeatureMatrix& x, std::span<const int> labels, const BoostConfig& cfg, int k,
                  std::uint64_t seed, int jobs) {
  CvResult res;
  res.fold_of = stratified_folds(labels, k, seed);
  res.oof_proba.assign(labels.size(), 0.0);
  res.fold_aucs.assign(k, 0.0);
  std::vector<std::vector<char>> used(k, std::vector<char>(x.cols, 0));
  parallel_for(static_cast<std::size_t>(k), jobs, [&](std::size_t fi) {
    std::vector<int> tr, te;
    for (std::size_t i = 0; i < labels.size(); ++i)
      (res.fold_of[i] == static_cast<int>(fi) ? te : tr).push_back(static_cast<int>(i));
    std::vector<int> ytr, yte;
    for (int i : tr) ytr.push_back(labels[i]);
    for (int i : te) yte.push_back(labels[i]);
    const auto model = fit(x.select_rows(tr), ytr, cfg);
    for (const auto& t : model.trees)
      for (const auto& n : t.nodes)
        if (!n.leaf) used[fi][n.feature] = 1;
    const auto p = predict_proba(model, x.select_rows(te));
    for (std::size_t j = 0; j < te.size(); ++j) res.oof_proba[te[j]] = p[j];
    res.fold_aucs[fi] = metrics::auc(p, yte);
  });
  double s = 0;
  for (double a : res.fold_aucs) s += a;
  res.mean_auc = s / k;
  for (int f = 0; f < x.cols; ++f) {
    bool any = false;
    for (const auto& u : used) any = any || u[f];
    if (any) res.used_features.push_back(f);
  }
  return res;
}

SelectionResult backward_feature_selection(const FeatureMatrix& x, std::span<const int> labels,
                                           const BoostConfig& cfg, int min_features, int k, std::uint64_t cv_seed,
                                           int jobs) {
  if (min_features < 1 || min_features > x.cols)
    fail(ErrorCode::InvalidArgument, "min_features must lie in [1, number of features]");
  SelectionResult res;
  std::vector<int> current(x.cols);
  for (int f = 0; f < x.cols; ++f) current[f] = f;
  const auto first = kfold_cv(x, labels, cfg, k, cv_seed);
  res.initial_auc = first.mean_auc;
  res.best_subset = current;
  res.best_auc = res.initial_auc;
  double cur_auc = first.mean_auc;
  std::set<int> cur_used(first.used_features.begin(), first.used_features.end());
  while (static_cast<int>(current.size()) > min_features) {
    // A column no fold model splits on can go without changing any fit, so
    // its score is the current one; only used columns need a refit.
    std::vector<double> aucs(current.size(), cur_auc);
    std::vector<std::set<int>> used(current.size(), cur_used);
    std::vector<std::size_t> refit;
    for (std::size_t j = 0; j < current.size(); ++j)
      if (cur_used.count(current[j])) refit.push_back(j);
    parallel_for(refit.size(), jobs, [&](std::size_t t) {
      const std::size_t j = refit[t];
      std::vector<int> keep;
      for (std::size_t i = 0; i < current.size(); ++i)
        if (i != j) keep.push_back(current[i]);
      const auto cv = kfold_cv(x.select_cols(keep), labels, cfg, k, cv_seed);
      aucs[j] = cv.mean_auc;
      used[j].clear();
      for (int u : cv.used_features) used[j].insert(keep[u]);
    });
    std::size_t pick = 0;
    for (std::size_t j = 1; j < aucs.size(); ++j)
      if (aucs[j] > aucs[pick]) pick = j;
    res.trace.push_back({current[pick], aucs[pick]});
    cur_auc = aucs[pick];
    cur_used = std::move(used[pick]);
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(pick));
    // ties favour the smaller subset
    if (cur_auc >= res.best_auc) {
      res.best_auc = cur_auc;
      res.best_subset = current;
    }
  }
  return res;
}

void ZooSpec::validate() const {
  if (depths.empty() || learning_rates.empty() || lambdas.empty() || seeds.empty())
    fail(ErrorCode::InvalidArgument, "zoo grid axes must be non-empty");
  if (folds < 2) fail(ErrorCode::InvalidArgument, "folds must be >= 2");
  if (min_features < 1) fail(ErrorCode::InvalidArgument, "min_features must be >= 1");
}

std::vector<ZooEntry> run_zoo(const FeatureMatrix& x, std::span<const int> labels,
                              const std::vector<std::string>& names, const ZooSpec& spec, int jobs) {
  spec.validate();
  if (static_cast<int>(names.size()) != x.cols) fail(ErrorCode::FeatureCountMismatch, "names do not match columns");
  std::vector<ZooEntry> zoo;
  for (auto seed : spec.seeds)
    for (int d : spec.depths)
      for (double lr : spec.learning_rates)
        for (double lam : spec.lambdas) {
          ZooEntry e;
          e.config.n_trees = spec.n_trees;
          e.config.max_depth = d;
          e.config.learning_rate = lr;
          e.config.l2_lambda = lam;
          e.config.min_child_hessian = spec.min_child_hessian;
          e.config.subsample = spec.subsample;
          e.config.seed = seed;
          e.config.validate();
          e.model_id = "gbm_d" + std::to_string(d) + "_lr" + format_double(lr, 6) + "_l" + format_double(lam, 6) +
                       "_s" + std::to_string(seed);
          zoo.push_back(std::move(e));
        }
  parallel_for(zoo.size(), jobs, [&](std::size_t i) {
    auto& e = zoo[i];
    std::vector<int> cols;
    if (spec.select_features) {
      const auto sel = backward_feature_selection(x, labels, e.config, std::min(spec.min_features, x.cols),
                                                  spec.folds, e.config.seed);
      cols = sel.best_subset;
      e.mean_cv_auc = sel.best_auc;
    } else {
      for (int f = 0; f < x.cols; ++f) cols.push_back(f);
      e.mean_cv_auc = kfold_cv(x, labels, e.config, spec.folds, e.config.seed).mean_auc;
    }
    for (int c : cols) e.selected.push_back(names[c]);
    e.model = fit(x.select_cols(cols), labels, e.config, e.selected);
  });
  return zoo;
}

std::vector<int> top_models(const std::vector<ZooEntry>& zoo, int top) {
  std::vector<int> idx(zoo.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return zoo[a].mean_cv_auc > zoo[b].mean_cv_auc; });
  if (static_cast<int>(idx.size()) > top) idx.resize(std::max(0, top));
  return idx;
}

namespace {

nlohmann::ordered_json node_json(const Tree& t, int n) {
  const auto& node = t.nodes[n];
  nlohmann::ordered_json j;
  if (node.leaf) {
    j["leaf"] = node.weight;
    return j;
  }
  j["feature"] = node.feature;
  j["threshold"] = node.threshold;
  j["gain"] = node.gain;
  j["default_branch"] = node.default_left ? "left" : "right";
  j["left"] = node_json(t, node.left);
  j["right"] = node_json(t, node.right);
  return j;
}

int parse_node(const nlohmann::json& j, int n_features, Tree& t) {
  const int id = static_cast<int>(t.nodes.size());
  t.nodes.emplace_back();
  TreeNode node;
  if (j.contains("leaf")) {
    node.weight = j.at("leaf").get<double>();
    if (!std::isfinite(node.weight)) fail(ErrorCode::MalformedHeader, "non-finite leaf weight");
  } else {
    node.leaf = false;
    node.feature = j.at("feature").get<int>();
    node.threshold = j.at("threshold").get<double>();
    node.gain = j.at("gain").get<double>();
    node.default_left = j.at("default_branch").get<std::string>() == "left";
    if (node.feature < 0 || node.feature >= n_features) fail(ErrorCode::ShapeMismatch, "split feature out of range");
    if (!std::isfinite(node.threshold)) fail(ErrorCode::MalformedHeader, "non-finite threshold");
    node.left = parse_node(j.at("left"), n_features, t);
    node.right = parse_node(j.at("right"), n_features, t);
  }
  t.nodes[id] = node;
  return id;
}

}  // namespace

void save_model(const BoostedModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["format_version"] = kModelFormatVersion;
  j["base_score"] = model.base_score;
  auto& c = j["config"];
  c["n_trees"] = model.config.n_trees;
  c["max_depth"] = model.config.max_depth;
  c["learning_rate"] = model.config.learning_rate;
  c["l2_lambda"] = model.config.l2_lambda;
  c["min_child_hessian"] = model.config.min_child_hessian;
  c["subsample"] = model.config.subsample;
  c["seed"] = model.config.seed;
  j["features"] = model.features;
  auto& trees = j["trees"] = nlohmann::ordered_json::array();
  for (const auto& t : model.trees) trees.push_back(node_json(t, 0));
  write_text_file(path, j.dump(1) + "\n");
}

BoostedModel load_model(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      fail(ErrorCode::VersionMismatch, path.string() + ": unsupported boosted model version");
    BoostedModel m;
    m.base_score = j.at("base_score").get<double>();
    const auto& c = j.at("config");
    m.config.n_trees = c.at("n_trees").get<int>();
    m.config.max_depth = c.at("max_depth").get<int>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.l2_lambda = c.at("l2_lambda").get<double>();
    m.config.min_child_hessian = c.at("min_child_hessian").get<double>();
    m.config.subsample = c.at("subsample").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.validate();
    m.features = j.at("features").get<std::vector<std::string>>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      parse_node(tj, static_cast<int>(m.features.size()), t);
      if (t.depth() > m.config.max_depth) fail(ErrorCode::MalformedHeader, "tree deeper than max_depth");
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

void write_zoo_csv(const std::vector<ZooEntry>& zoo, const std::filesystem::path& path) {
  std::string out = "model_id,max_depth,learning_rate,l2_lambda,n_trees,seed,mean_cv_auc,selected_features\n";
  for (const auto& e : zoo) {
    std::string sel;
    for (const auto& s : e.selected) sel += (sel.empty() ? "" : ";") + s;
    out += e.model_id + "," + std::to_string(e.config.max_depth) + "," + format_double(e.config.learning_rate) + "," +
           format_double(e.config.l2_lambda) + "," + std::to_string(e.config.n_trees) + "," +
           std::to_string(e.config.seed) + "," + format_double(e.mean_cv_auc) + "," + sel + "\n";
  }
  write_text_file(path, out);
}

}  // namespace lesionkit::gbm
