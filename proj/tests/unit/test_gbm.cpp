#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "lesionkit/error.hpp"
#include "lesionkit/gbm.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/util.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace lesionkit;
using namespace lesionkit::gbm;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

struct Dataset {
  FeatureMatrix x;
  std::vector<int> y;
};

// Column `signal` carries label information with the given strength; every
// other column is pure noise.
Dataset make_dataset(int n, int f, std::uint64_t seed, int signal = 0, double strength = 1.5) {
  Rng rng(seed);
  Dataset d{FeatureMatrix(n, f), std::vector<int>(n)};
  for (int i = 0; i < n; ++i) {
    d.y[i] = rng.bernoulli(0.5) ? 1 : 0;
    if (i < 2) d.y[i] = i;  // both classes present
    for (int c = 0; c < f; ++c) d.x(i, c) = rng.normal();
    if (signal >= 0) d.x(i, signal) += strength * d.y[i];
  }
  return d;
}

// Hand evaluation of the second-order gain, written out term by term.
double hand_gain(double gl, double hl, double gr, double hr, double lam) {
  const double left = gl * gl / (hl + lam);
  const double right = gr * gr / (hr + lam);
  const double parent = (gl + gr) * (gl + gr) / (hl + hr + lam);
  return (left + right - parent) / 2.0;
}

std::vector<int> rows_reaching(const Tree& t, const FeatureMatrix& x, std::span<const int> rows, int target) {
  std::vector<int> out;
  for (int r : rows) {
    int n = 0;
    while (true) {
      if (n == target) {
        out.push_back(r);
        break;
      }
      const auto& node = t.nodes[n];
      if (node.leaf) break;
      n = x(r, node.feature) < node.threshold ? node.left : node.right;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("hand-set gradient table") {
  FeatureMatrix x(4, 1);
  for (int i = 0; i < 4; ++i) x(i, 0) = i + 1.0;
  const std::vector<double> g{-0.5, -0.3, 0.4, 0.2}, h{0.25, 0.21, 0.24, 0.16};
  const std::vector<int> rows{0, 1, 2, 3};
  const double lam = 1.0;
  // candidates: {0}|{1,2,3}, {0,1}|{2,3}, {0,1,2}|{3}
  const double c1 = hand_gain(-0.5, 0.25, 0.3, 0.61, lam);
  const double c2 = hand_gain(-0.8, 0.46, 0.6, 0.40, lam);
  const double c3 = hand_gain(-0.4, 0.70, 0.2, 0.16, lam);
  REQUIRE(c2 > c1);
  REQUIRE(c2 > c3);
  const auto s = best_split(x, g, h, rows, lam, 0.0);
  REQUIRE(s.found);
  CHECK(s.feature == 0);
  CHECK(s.threshold == 2.5);
  CHECK(std::abs(s.gain - c2) < 1e-9);
  CHECK(std::abs(split_gain(-0.8, 0.46, 0.6, 0.40, lam) - c2) < 1e-9);

  BoostConfig cfg;
  cfg.max_depth = 1;
  cfg.l2_lambda = lam;
  cfg.min_child_hessian = 0.0;
  const Tree t = grow_tree(x, g, h, rows, cfg);
  REQUIRE(t.nodes.size() == 3);
  CHECK(std::abs(t.nodes[t.nodes[0].left].weight - 0.8 / 1.46) < 1e-9);
  CHECK(std::abs(t.nodes[t.nodes[0].right].weight - (-0.6 / 1.40)) < 1e-9);
  CHECK(std::abs(leaf_weight(0.3, 0.5, 1.0) + 0.2) < 1e-15);

  SUBCASE("min_child_hessian rules out light children") {
    const auto s2 = best_split(x, g, h, rows, lam, 0.3);
    REQUIRE(s2.found);
    CHECK(s2.threshold == 2.5);
    CHECK_FALSE(best_split(x, g, h, rows, lam, 0.5).found);
  }
  SUBCASE("tie goes to the lower feature index") {
    FeatureMatrix x2(4, 2);
    for (int i = 0; i < 4; ++i) x2(i, 0) = x2(i, 1) = i + 1.0;
    CHECK(best_split(x2, g, h, rows, lam, 0.0).feature == 0);
  }
}

TEST_CASE("grown trees: leaf weights and split optimality") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto d = make_dataset(40, 4, seed);
    Rng rng(seed + 100);
    std::vector<double> g(40), h(40);
    for (int i = 0; i < 40; ++i) {
      const double p = rng.uniform(0.05, 0.95);
      g[i] = p - d.y[i];
      h[i] = p * (1 - p);
    }
    std::vector<int> rows(40);
    for (int i = 0; i < 40; ++i) rows[i] = i;
    BoostConfig cfg;
    cfg.max_depth = 3;
    cfg.l2_lambda = 0.5 + static_cast<double>(seed);
    cfg.min_child_hessian = 0.0;
    const Tree t = grow_tree(d.x, g, h, rows, cfg);
    CHECK(t.depth() <= 3);
    for (int n = 0; n < static_cast<int>(t.nodes.size()); ++n) {
      const auto at = rows_reaching(t, d.x, rows, n);
      double G = 0, H = 0;
      for (int r : at) G += g[r], H += h[r];
      if (t.nodes[n].leaf) {
        CHECK(std::abs(t.nodes[n].weight - (-G / (H + cfg.l2_lambda))) < 1e-12);
        continue;
      }
      // exhaustive candidate enumeration at this node
      double best = -1;
      for (int f = 0; f < d.x.cols; ++f) {
        std::set<double> vals;
        for (int r : at) vals.insert(d.x(r, f));
        for (auto it = vals.begin(); std::next(it) != vals.end(); ++it) {
          const double thr = 0.5 * (*it + *std::next(it));
          double gl = 0, hl = 0;
          for (int r : at)
            if (d.x(r, f) < thr) gl += g[r], hl += h[r];
          best = std::max(best, hand_gain(gl, hl, G - gl, H - hl, cfg.l2_lambda));
        }
      }
      CHECK(t.nodes[n].gain >= best - 1e-12);
      CHECK(std::abs(t.nodes[n].gain - best) < 1e-9);
    }
  }
}

TEST_CASE("fit") {
  SUBCASE("training loss never increases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto d = make_dataset(60, 5, seed, static_cast<int>(seed % 5), 0.8);
      BoostConfig cfg;
      cfg.n_trees = 40;
      cfg.learning_rate = 0.3;
      std::vector<double> trace;
      fit(d.x, d.y, cfg, {}, &trace);
      REQUIRE(trace.size() == 41);
      for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
    }
  }
  SUBCASE("separable feature, one stump") {
    FeatureMatrix x(10, 2);
    std::vector<int> y(10);
    Rng rng(2);
    for (int i = 0; i < 10; ++i) {
      y[i] = i % 2;
      x(i, 0) = rng.normal();
      x(i, 1) = y[i] ? 5.0 + i : -5.0 - i;
    }
    BoostConfig cfg;
    cfg.n_trees = 1;
    cfg.max_depth = 1;
    const auto m = fit(x, y, cfg);
    const auto p = predict_proba(m, x);
    CHECK(metrics::auc(p, y) == 1.0);
    for (int i = 0; i < 10; ++i) CHECK((p[i] > 0.5) == (y[i] == 1));
  }
  SUBCASE("huge lambda keeps the prior") {
    const auto d = make_dataset(30, 3, 4);
    BoostConfig cfg;
    cfg.l2_lambda = 1e9;
    cfg.n_trees = 5;
    const auto m = fit(d.x, d.y, cfg);
    for (const auto& t : m.trees)
      for (const auto& n : t.nodes)
        if (n.leaf) CHECK(std::abs(n.weight) < 1e-6);
    int pos = 0;
    for (int v : d.y) pos += v;
    const double prior = pos / 30.0;
    for (double p : predict_proba(m, d.x)) CHECK(std::abs(p - prior) < 1e-6);
  }
  SUBCASE("single class gives a constant prior model") {
    FeatureMatrix x(6, 2);
    const std::vector<int> y(6, 1);
    const auto m = fit(x, y, BoostConfig{});
    CHECK(m.trees.empty());
    CHECK(m.base_score == doctest::Approx(std::log((1 - 1e-6) / 1e-6)));
  }
  SUBCASE("preconditions") {
    FeatureMatrix x(3, 1);
    CHECK(code_of([&] { fit(x, std::vector<int>{0, 1, 0}, BoostConfig{}); }) == ErrorCode::TooFewSamples);
    BoostConfig bad;
    bad.learning_rate = 0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
  }
  SUBCASE("subsample is deterministic under seed") {
    const auto d = make_dataset(50, 4, 8);
    BoostConfig cfg;
    cfg.subsample = 0.7;
    cfg.seed = 3;
    const auto a = predict_proba(fit(d.x, d.y, cfg), d.x);
    CHECK(predict_proba(fit(d.x, d.y, cfg), d.x) == a);
    cfg.seed = 4;
    CHECK(predict_proba(fit(d.x, d.y, cfg), d.x) != a);
  }
}

TEST_CASE("predict_proba") {
  BoostedModel m;
  m.features = {"a", "b"};
  FeatureMatrix x(3, 2);
  for (double p : predict_proba(m, x)) CHECK(p == 0.5);
  CHECK(code_of([&] { predict_proba(m, FeatureMatrix(3, 3)); }) == ErrorCode::FeatureCountMismatch);

  const auto d = make_dataset(40, 3, 11);
  const auto fitted = fit(d.x, d.y, BoostConfig{}, {"a", "b", "c"});
  const auto base = predict_proba(fitted, d.x);
  // same data, columns permuted and one extra column
  FeatureMatrix perm(40, 4);
  for (int i = 0; i < 40; ++i) {
    perm(i, 0) = 7.0;
    perm(i, 1) = d.x(i, 2);
    perm(i, 2) = d.x(i, 0);
    perm(i, 3) = d.x(i, 1);
  }
  CHECK(predict_proba(fitted, perm, {"z", "c", "a", "b"}) == base);
  CHECK(code_of([&] { predict_proba(fitted, perm, {"z", "c", "a", "q"}); }) == ErrorCode::FeatureCountMismatch);

  auto bumped = fitted;
  Tree t;
  t.nodes.push_back({false, 0, 0.0, 1, 2, true, 0.0, 1.0});
  t.nodes.push_back({true, -1, 0, -1, -1, true, 0.2, 0});
  t.nodes.push_back({true, -1, 0, -1, -1, true, 0.9, 0});
  bumped.trees.push_back(t);
  const auto up = predict_proba(bumped, d.x);
  for (int i = 0; i < 40; ++i) CHECK(up[i] > base[i]);
}

TEST_CASE("kfold_cv") {
  SUBCASE("folds partition the samples") {
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i) y[i] = i < 50;
    const auto folds = stratified_folds(y, 5, 9);
    std::vector<int> size(5, 0), pos(5, 0);
    for (int i = 0; i < 100; ++i) {
      REQUIRE(folds[i] >= 0);
      REQUIRE(folds[i] < 5);
      ++size[folds[i]];
      pos[folds[i]] += y[i];
    }
    for (int f = 0; f < 5; ++f) {
      CHECK(size[f] == 20);
      CHECK(pos[f] == 10);
    }
    CHECK(folds == stratified_folds(y, 5, 9));
    const std::vector<int> few{0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
    CHECK(code_of([&] { stratified_folds(few, 5, 0); }) == ErrorCode::TooFewSamples);
  }
  SUBCASE("separable data") {
    const auto d = make_dataset(100, 4, 21, 1, 6.0);
    const auto cv = kfold_cv(d.x, d.y, BoostConfig{}, 5, 1);
    CHECK(cv.mean_auc > 0.95);
    CHECK(cv.fold_aucs.size() == 5);
  }
  SUBCASE("shuffled labels") {
    const auto d = make_dataset(200, 5, 22, -1);
    const auto cv = kfold_cv(d.x, d.y, BoostConfig{}, 5, 1);
    CHECK(cv.mean_auc >= 0.35);
    CHECK(cv.mean_auc <= 0.65);
  }
  SUBCASE("jobs do not change results") {
    const auto d = make_dataset(60, 3, 23, 0, 1.0);
    const auto a = kfold_cv(d.x, d.y, BoostConfig{}, 5, 2, 1);
    const auto b = kfold_cv(d.x, d.y, BoostConfig{}, 5, 2, 3);
    CHECK(a.fold_aucs == b.fold_aucs);
    CHECK(a.oof_proba == b.oof_proba);
  }
}

TEST_CASE("kfold_cv used features") {
  BoostConfig cfg;
  cfg.n_trees = 8;
  cfg.max_depth = 2;
  const auto d = make_dataset(60, 5, 34, 1, 2.0);
  const auto cv = kfold_cv(d.x, d.y, cfg, 3, 1);
  std::set<int> want;
  const auto folds = stratified_folds(d.y, 3, 1);
  for (int f = 0; f < 3; ++f) {
    std::vector<int> tr, ytr;
    for (int i = 0; i < d.x.rows; ++i)
      if (folds[i] != f) tr.push_back(i), ytr.push_back(d.y[i]);
    for (const auto& t : fit(d.x.select_rows(tr), ytr, cfg).trees)
      for (const auto& n : t.nodes)
        if (!n.leaf) want.insert(n.feature);
  }
  CHECK(cv.used_features == std::vector<int>(want.begin(), want.end()));
}

TEST_CASE("backward_feature_selection") {
  BoostConfig cfg;
  cfg.n_trees = 30;
  cfg.max_depth = 2;
  cfg.learning_rate = 0.3;
  SUBCASE("noise columns go first") {
    const auto d = make_dataset(120, 6, 31, 3, 2.0);
    const auto sel = backward_feature_selection(d.x, d.y, cfg, 1, 5, 0);
    REQUIRE(sel.trace.size() == 5);
    for (const auto& s : sel.trace) CHECK(s.removed != 3);
    CHECK(std::find(sel.best_subset.begin(), sel.best_subset.end(), 3) != sel.best_subset.end());
    const auto again = backward_feature_selection(d.x, d.y, cfg, 1, 5, 0);
    REQUIRE(again.trace.size() == sel.trace.size());
    for (std::size_t i = 0; i < sel.trace.size(); ++i) {
      CHECK(again.trace[i].removed == sel.trace[i].removed);
      CHECK(again.trace[i].mean_auc == sel.trace[i].mean_auc);
    }
  }
  SUBCASE("matches elimination that refits every candidate") {
    BoostConfig small = cfg;
    small.n_trees = 5;
    small.max_depth = 1;  // few splits, so many columns stay unused
    const auto d = make_dataset(80, 8, 33, 5, 1.2);
    const auto sel = backward_feature_selection(d.x, d.y, small, 1, 4, 2, 3);
    std::vector<int> cur{0, 1, 2, 3, 4, 5, 6, 7};
    REQUIRE(sel.trace.size() == 7);
    for (const auto& step : sel.trace) {
      std::size_t pick = 0;
      double best = -1;
      for (std::size_t j = 0; j < cur.size(); ++j) {
        std::vector<int> keep = cur;
        keep.erase(keep.begin() + static_cast<std::ptrdiff_t>(j));
        const double a = kfold_cv(d.x.select_cols(keep), d.y, small, 4, 2).mean_auc;
        if (a > best) best = a, pick = j;
      }
      CHECK(step.removed == cur[pick]);
      CHECK(step.mean_auc == best);
      cur.erase(cur.begin() + static_cast<std::ptrdiff_t>(pick));
    }
  }
  SUBCASE("nothing to remove") {
    const auto d = make_dataset(40, 2, 32);
    const auto sel = backward_feature_selection(d.x, d.y, cfg, 2);
    CHECK(sel.trace.empty());
    CHECK(sel.best_subset == std::vector<int>{0, 1});
  }
}

TEST_CASE("model files and zoo") {
  const auto d = make_dataset(60, 4, 41, 2, 1.5);
  test_support::TempDir dir("gbm");
  const auto m = fit(d.x, d.y, BoostConfig{}, {"a", "b", "c", "d"});
  save_model(m, dir.path() / "m.json");
  const auto back = load_model(dir.path() / "m.json");
  CHECK(predict_proba(back, d.x) == predict_proba(m, d.x));
  save_model(back, dir.path() / "m2.json");
  CHECK(read_text_file(dir.path() / "m.json") == read_text_file(dir.path() / "m2.json"));

  auto text = read_text_file(dir.path() / "m.json");
  text.replace(text.find("\"format_version\": 1"), 19, "\"format_version\": 9");
  write_text_file(dir.path() / "bad.json", text);
  CHECK(code_of([&] { load_model(dir.path() / "bad.json"); }) == ErrorCode::VersionMismatch);

  ZooSpec spec;
  spec.depths = {1, 2};
  spec.learning_rates = {0.3};
  spec.lambdas = {1.0};
  spec.n_trees = 20;
  spec.min_features = 2;
  const auto zoo = run_zoo(d.x, d.y, {"a", "b", "c", "d"}, spec, 2);
  REQUIRE(zoo.size() == 2);
  CHECK(zoo[0].model_id == "gbm_d1_lr0.3_l1_s0");
  for (const auto& e : zoo) {
    CHECK(e.selected.size() >= 2);
    CHECK(e.model.features == e.selected);
  }
  const auto top = top_models(zoo, 1);
  REQUIRE(top.size() == 1);
  CHECK(zoo[top[0]].mean_cv_auc >= zoo[1 - top[0]].mean_cv_auc);
  write_zoo_csv(zoo, dir.path() / "zoo.csv");
  CHECK(read_text_file(dir.path() / "zoo.csv").rfind("model_id,max_depth", 0) == 0);
}
