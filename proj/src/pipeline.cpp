#include "lesionkit/pipeline.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "lesionkit/ensemble.hpp"
#include "lesionkit/error.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/radiomics.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestName = "run_manifest.json";

// Reads keys out of one JSON object and complains about anything left over.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown configuration key " + where(k));
  }

 private:
  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_views(Section s, ViewPlan& v) {
  s.get("mode", v.mode);
  s.get("per_orientation", v.per_orientation);
  s.get("rotations", v.rotations);
  s.get("shears", v.shears);
  s.finish();
}

ojson views_json(const ViewPlan& v) {
  return {{"mode", v.mode}, {"per_orientation", v.per_orientation}, {"rotations", v.rotations}, {"shears", v.shears}};
}

ojson phantom_json(const phantom::PhantomSpec& p) {
  return {{"n_cases", p.n_cases},
          {"lesions_min", p.lesions_min},
          {"lesions_max", p.lesions_max},
          {"significant_fraction", p.significant_fraction},
          {"contrast_gap", p.contrast_gap},
          {"noise_sigma", p.noise_sigma},
          {"dims", p.dims},
          {"spacing", p.spacing}};
}

ojson config_json(const RunConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  j["data"] = {{"cases_dir", c.data.cases_dir},
               {"findings_csv", c.data.findings_csv},
               {"exclusion_list", c.data.exclusion_list}};
  j["phantom"] = phantom_json(c.phantom);
  j["preprocess"] = {{"isotropic_spacing", c.preprocess.isotropic_spacing},
                     {"val_fraction", c.preprocess.val_fraction},
                     {"rel_threshold", c.preprocess.grow.rel_threshold},
                     {"max_radius_mm", c.preprocess.grow.max_radius_mm},
                     {"morph_radius_vox", c.preprocess.grow.morph_radius_vox}};
  j["augment"] = {{"channel_sets", c.augment.channel_sets},
                  {"train_views", views_json(c.augment.train_views)},
                  {"val_views", views_json(c.augment.val_views)}};
  j["features"] = {{"gray_levels", c.features.gray_levels}};
  const auto& t = c.cnn.train;
  j["cnn"] = {{"replicas", c.cnn.replicas},     {"learning_rate", t.learning_rate}, {"weight_decay", t.weight_decay},
              {"beta1", t.beta1},               {"beta2", t.beta2},                 {"epsilon", t.epsilon},
              {"batch_size", t.batch_size},     {"max_steps", t.max_steps},         {"eval_every", t.eval_every},
              {"patience", t.patience},         {"mirror", t.mirror}};
  const auto& z = c.gbm.zoo;
  j["gbm"] = {{"depths", z.depths},
              {"learning_rates", z.learning_rates},
              {"lambdas", z.lambdas},
              {"seeds", z.seeds},
              {"n_trees", z.n_trees},
              {"min_child_hessian", z.min_child_hessian},
              {"subsample", z.subsample},
              {"folds", z.folds},
              {"select_features", z.select_features},
              {"min_features", z.min_features},
              {"top_models", c.gbm.top_models}};
  j["ensemble"] = {{"max_iters", c.ensemble.max_iters}, {"patience", c.ensemble.patience}};
  return j;
}

// ---- paths and hashing -----------------------------------------------------

fs::path cases_dir(const RunConfig& c, const fs::path& out) {
  return c.data.cases_dir.empty() ? stage_dir(out, Stage::Phantom) / "cases" : fs::path(c.data.cases_dir);
}
fs::path findings_path(const RunConfig& c, const fs::path& out) {
  return c.data.findings_csv.empty() ? stage_dir(out, Stage::Phantom) / "findings.csv" : fs::path(c.data.findings_csv);
}

std::string display_path(const fs::path& p, const fs::path& out) {
  const auto rel = p.lexically_relative(out);
  if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
  return p.generic_string();
}

// Every regular file under `p` (or p itself), sorted, without run manifests.
std::vector<fs::path> list_files(const fs::path& p) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(p)) {
    files.push_back(p);
  } else if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p))
      if (e.is_regular_file() && e.path().filename() != kManifestName) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

ojson hash_files(const std::vector<fs::path>& roots, const fs::path& out) {
  ojson h = ojson::object();
  for (const auto& r : roots) {
    if (!fs::exists(r)) fail(ErrorCode::IoError, "missing stage input " + r.string());
    for (const auto& f : list_files(r)) h[display_path(f, out)] = sha256_file(f);
  }
  return h;
}

std::vector<fs::path> stage_inputs(Stage s, const RunConfig& c, const fs::path& out) {
  switch (s) {
    case Stage::Phantom: return {};
    case Stage::Preprocess: {
      std::vector<fs::path> in{cases_dir(c, out), findings_path(c, out)};
      if (!c.data.exclusion_list.empty()) in.emplace_back(c.data.exclusion_list);
      return in;
    }
    case Stage::Augment:
    case Stage::Features: return {stage_dir(out, Stage::Preprocess)};
    case Stage::TrainCnn: return {stage_dir(out, Stage::Augment)};
    case Stage::TrainGbm: return {stage_dir(out, Stage::Features), stage_dir(out, Stage::Preprocess) / "split.json"};
    case Stage::SelectEnsemble:
      return {stage_dir(out, Stage::TrainCnn), stage_dir(out, Stage::TrainGbm) / "val_predictions.csv",
              stage_dir(out, Stage::Preprocess) / "findings.csv", stage_dir(out, Stage::Preprocess) / "split.json"};
    case Stage::Predict:
      return {stage_dir(out, Stage::SelectEnsemble), stage_dir(out, Stage::TrainCnn),
              stage_dir(out, Stage::TrainGbm) / "val_predictions.csv",
              stage_dir(out, Stage::Preprocess) / "findings.csv", stage_dir(out, Stage::Preprocess) / "split.json"};
    case Stage::Evaluate: return {stage_dir(out, Stage::Predict), stage_dir(out, Stage::Preprocess) / "findings.csv"};
  }
  return {};
}

// The slice of the configuration a stage depends on.
ojson stage_config(Stage s, const RunConfig& c) {
  const ojson all = config_json(c);
  ojson j;
  j["seed"] = c.seed;
  switch (s) {
    case Stage::Phantom: j["phantom"] = all["phantom"]; break;
    case Stage::Preprocess:
      j["data"] = all["data"];
      j["preprocess"] = all["preprocess"];
      break;
    case Stage::Augment: j["augment"] = all["augment"]; break;
    case Stage::Features:
      j["features"] = all["features"];
      j["preprocess"] = all["preprocess"];
      break;
    case Stage::TrainCnn: j["cnn"] = all["cnn"]; break;
    case Stage::TrainGbm: j["gbm"] = all["gbm"]; break;
    case Stage::SelectEnsemble:
    case Stage::Predict: j["ensemble"] = all["ensemble"]; break;
    case Stage::Evaluate: break;
  }
  return j;
}

// ---- shared loaders --------------------------------------------------------

std::map<std::string, volgrid::CaseBundle> load_bundles(const fs::path& dir, const std::vector<std::string>& ids,
                                                       int jobs) {
  std::vector<volgrid::CaseBundle> v(ids.size());
  parallel_for(ids.size(), jobs, [&](std::size_t i) { v[i] = volgrid::read_case(dir / ids[i], ids[i]); });
  std::map<std::string, volgrid::CaseBundle> out;
  for (auto& b : v) {
    const std::string id = b.case_id;
    out.emplace(id, std::move(b));
  }
  return out;
}

std::vector<std::string> case_ids(const std::vector<volgrid::Finding>& findings) {
  std::set<std::string> s;
  for (const auto& f : findings) s.insert(f.case_id);
  return {s.begin(), s.end()};
}

std::vector<volgrid::Finding> in_cases(const std::vector<volgrid::Finding>& findings,
                                       const std::vector<std::string>& ids) {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<volgrid::Finding> out;
  for (const auto& f : findings)
    if (keep.count(f.case_id)) out.push_back(f);
  return out;
}

std::map<ensemble::FindingKey, int> val_labels(const fs::path& out) {
  const auto findings = volgrid::read_findings_csv(stage_dir(out, Stage::Preprocess) / "findings.csv");
  const auto split = preprocess::read_split(stage_dir(out, Stage::Preprocess) / "split.json");
  std::map<ensemble::FindingKey, int> labels;
  for (const auto& f : in_cases(findings, split.val_case_ids))
    if (f.label) labels[{f.case_id, f.finding_id}] = *f.label;
  return labels;
}

std::vector<ensemble::ViewPrediction> component_predictions(const fs::path& out) {
  std::vector<ensemble::ViewPrediction> views;
  std::vector<fs::path> files;
  const auto cnn = stage_dir(out, Stage::TrainCnn);
  for (const auto& e : fs::directory_iterator(cnn))
    if (e.is_directory() && fs::exists(e.path() / "val_views.csv")) files.push_back(e.path() / "val_views.csv");
  std::sort(files.begin(), files.end());
  files.push_back(stage_dir(out, Stage::TrainGbm) / "val_predictions.csv");
  for (const auto& f : files) {
    auto v = ensemble::read_predictions_csv(f);
    views.insert(views.end(), v.begin(), v.end());
  }
  return views;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// ---- stages ----------------------------------------------------------------

void run_phantom(const RunConfig& c, const fs::path& dir, StageResult& r) {
  auto spec = c.phantom;
  spec.seed = derive_seed(c.seed, "phantom");
  const auto set = phantom::generate_to_disk(spec, dir, c.jobs);
  int pos = 0;
  for (const auto& f : set.findings) pos += f.label.value_or(0);
  r.lines.push_back(std::to_string(set.bundles.size()) + " cases, " + std::to_string(set.findings.size()) +
                    " findings, " + std::to_string(pos) + " significant");
}

void run_preprocess(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  auto findings = volgrid::read_findings_csv(findings_path(c, out));
  if (!c.data.exclusion_list.empty()) {
    const auto excl = preprocess::read_exclusion_list(c.data.exclusion_list);
    const std::set<std::string> drop(excl.begin(), excl.end());
    std::erase_if(findings, [&](const auto& f) { return drop.count(f.case_id) != 0; });
  }
  const auto ids = case_ids(findings);
  std::vector<std::vector<volgrid::Finding>> refined(ids.size());
  parallel_for(ids.size(), c.jobs, [&](std::size_t i) {
    const auto raw = volgrid::read_case(cases_dir(c, out) / ids[i], ids[i]);
    volgrid::CaseBundle iso;
    iso.case_id = ids[i];
    for (const auto& [m, v] : raw.channels) iso.channels[m] = volgrid::resample_isotropic(v, c.preprocess.isotropic_spacing);
    for (const auto& f : findings) {
      if (f.case_id != ids[i]) continue;
      auto g = f;
      g.pos_world = preprocess::refine_lesion_center(iso.channel(volgrid::Modality::DWI), f, c.preprocess.grow);
      refined[i].push_back(g);
    }
    volgrid::write_case(iso, dir / "cases" / ids[i]);
  });
  std::vector<volgrid::Finding> all;
  for (auto& v : refined) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return std::tie(a.case_id, a.finding_id) < std::tie(b.case_id, b.finding_id);
  });
  volgrid::write_findings_csv(all, dir / "findings.csv");
  const auto split = preprocess::stratified_split(all, c.preprocess.val_fraction, derive_seed(c.seed, "split"));
  preprocess::write_split(split, dir / "split.json");
  r.lines.push_back(std::to_string(ids.size()) + " cases resampled to " + format_double(c.preprocess.isotropic_spacing, 6) +
                    " mm; split " + std::to_string(split.train_case_ids.size()) + " train / " +
                    std::to_string(split.val_case_ids.size()) + " val cases");
}

void run_augment(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto pre = stage_dir(out, Stage::Preprocess);
  const auto findings = volgrid::read_findings_csv(pre / "findings.csv");
  const auto split = preprocess::read_split(pre / "split.json");
  const auto bundles = load_bundles(pre / "cases", case_ids(findings), c.jobs);
  const auto train_views = c.augment.train_views.views(derive_seed(c.seed, "views:train"));
  const auto val_views = c.augment.val_views.views(derive_seed(c.seed, "views:val"));
  const auto train_f = in_cases(findings, split.train_case_ids), val_f = in_cases(findings, split.val_case_ids);
  augment::BuildOptions opt;
  opt.jobs = c.jobs;
  for (const auto& name : c.augment.channel_sets) {
    const auto cs = augment::ChannelSet::parse(name);
    const auto nt = augment::build_dataset(bundles, train_f, train_views, cs, dir / name / "train.json", opt);
    const auto nv = augment::build_dataset(bundles, val_f, val_views, cs, dir / name / "val.json", opt);
    r.lines.push_back(name + ": " + std::to_string(nt) + " train / " + std::to_string(nv) + " val samples");
  }
}

void run_features(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto pre = stage_dir(out, Stage::Preprocess);
  const auto findings = volgrid::read_findings_csv(pre / "findings.csv");
  const auto bundles = load_bundles(pre / "cases", case_ids(findings), c.jobs);
  const auto rows = radiomics::extract_all(bundles, findings, c.preprocess.grow, c.jobs, c.features.gray_levels);
  radiomics::write_feature_csv(rows, radiomics::feature_names(), dir / "features.csv");
  r.lines.push_back(std::to_string(rows.size()) + " lesions x " + std::to_string(radiomics::kNumFeatures) + " features");
}

void run_train_cnn(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto aug = stage_dir(out, Stage::Augment);
  for (const auto& name : c.augment.channel_sets) {
    const auto train_set = augment::read_archive(aug / name / "train.json");
    const auto val_set = augment::read_archive(aug / name / "val.json");
    for (int rep = 0; rep < c.cnn.replicas; ++rep) {
      const std::string id = "xmasnet_" + name + "_r" + std::to_string(rep);
      auto tc = c.cnn.train;
      tc.seed = derive_seed(c.seed, "cnn:" + id);
      tc.jobs = c.jobs;
      const auto model = xmasnet::train(train_set, val_set, tc);
      xmasnet::save_model(model, dir / id / "model.json");
      const auto probs = xmasnet::predict(model.params, val_set, c.jobs);
      ensemble::write_predictions_csv(xmasnet::to_view_predictions(id, val_set, probs), dir / id / "val_views.csv");
      r.lines.push_back(id + ": best val AUC " + fmt4(model.best_val_auc) + " at step " + std::to_string(model.best_step) +
                        " (" + std::to_string(model.history.empty() ? 0 : model.history.back().step) + " steps)");
    }
  }
}

struct FeatureSplit {
  gbm::FeatureMatrix x_train, x_val;
  std::vector<int> y_train;
  std::vector<radiomics::FeatureRow> val_rows;
  std::vector<std::string> names;
};

FeatureSplit split_features(const fs::path& out) {
  FeatureSplit fsplit;
  const auto rows = radiomics::read_feature_csv(stage_dir(out, Stage::Features) / "features.csv", &fsplit.names);
  const auto split = preprocess::read_split(stage_dir(out, Stage::Preprocess) / "split.json");
  const std::set<std::string> train(split.train_case_ids.begin(), split.train_case_ids.end());
  const std::set<std::string> val(split.val_case_ids.begin(), split.val_case_ids.end());
  std::vector<const radiomics::FeatureRow*> tr;
  for (const auto& row : rows) {
    if (train.count(row.case_id) && row.label) tr.push_back(&row);
    if (val.count(row.case_id)) fsplit.val_rows.push_back(row);
  }
  const int f = static_cast<int>(fsplit.names.size());
  fsplit.x_train = gbm::FeatureMatrix(static_cast<int>(tr.size()), f);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    fsplit.y_train.push_back(*tr[i]->label);
    for (int j = 0; j < f; ++j) fsplit.x_train(static_cast<int>(i), j) = tr[i]->values[j];
  }
  fsplit.x_val = gbm::FeatureMatrix(static_cast<int>(fsplit.val_rows.size()), f);
  for (std::size_t i = 0; i < fsplit.val_rows.size(); ++i)
    for (int j = 0; j < f; ++j) fsplit.x_val(static_cast<int>(i), j) = fsplit.val_rows[i].values[j];
  return fsplit;
}

void run_train_gbm(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto d = split_features(out);
  const auto zoo = gbm::run_zoo(d.x_train, d.y_train, d.names, c.gbm.zoo, c.jobs);
  gbm::write_zoo_csv(zoo, dir / "zoo.csv");
  std::vector<ensemble::ViewPrediction> preds;
  for (int idx : gbm::top_models(zoo, c.gbm.top_models)) {
    const auto& e = zoo[idx];
    gbm::save_model(e.model, dir / "models" / (e.model_id + ".json"));
    const auto p = gbm::predict_proba(e.model, d.x_val, d.names);
    for (std::size_t i = 0; i < p.size(); ++i)
      preds.push_back({e.model_id, d.val_rows[i].case_id, d.val_rows[i].finding_id, 0, p[i]});
    r.lines.push_back(e.model_id + ": mean CV AUC " + fmt4(e.mean_cv_auc) + " with " +
                      std::to_string(e.selected.size()) + " features");
  }
  ensemble::write_predictions_csv(preds, dir / "val_predictions.csv");
}

void run_select(const RunConfig& c, const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto table = ensemble::build_table(component_predictions(out), val_labels(out));
  const auto sel = ensemble::greedy_select(table, c.ensemble.max_iters, c.ensemble.patience);
  ensemble::write_selection(sel, dir / "selection.json");
  std::string csv = "model_id,val_auc\n";
  for (std::size_t m = 0; m < table.model_ids.size(); ++m)
    csv += table.model_ids[m] + "," + format_double(metrics::auc(table.probs[m], table.labels)) + "\n";
  write_text_file(dir / "model_aucs.csv", csv);
  r.lines.push_back("ensemble of " + std::to_string(sel.picks.size()) + " picks, val AUC " + fmt4(sel.auc_trace.back()));
}

void run_predict(const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto sel = ensemble::read_selection(stage_dir(out, Stage::SelectEnsemble) / "selection.json");
  const auto labels = val_labels(out);
  const auto table = ensemble::build_table(component_predictions(out), labels);
  std::map<std::string, std::vector<double>> per_model;
  for (std::size_t m = 0; m < table.model_ids.size(); ++m) per_model[table.model_ids[m]] = table.probs[m];
  const auto blend = ensemble::ensemble_predict(sel.weights, per_model);
  std::vector<ensemble::ViewPrediction> rows;
  std::size_t i = 0;
  for (const auto& [key, label] : labels) rows.push_back({"ensemble", key.first, key.second, 0, blend[i++]});
  for (std::size_t m = 0; m < table.model_ids.size(); ++m) {
    i = 0;
    for (const auto& [key, label] : labels) rows.push_back({table.model_ids[m], key.first, key.second, 0, table.probs[m][i++]});
  }
  ensemble::write_predictions_csv(rows, dir / "predictions.csv");
  r.lines.push_back(std::to_string(labels.size()) + " validation lesions scored by the ensemble and " +
                    std::to_string(table.model_ids.size()) + " components");
}

void run_evaluate(const fs::path& out, const fs::path& dir, StageResult& r) {
  const auto reports = evaluate_predictions(stage_dir(out, Stage::Predict) / "predictions.csv",
                                            stage_dir(out, Stage::Preprocess) / "findings.csv", dir);
  for (const auto& rep : reports) r.lines.push_back(rep.name + " AUC " + fmt4(rep.auc));
}

}  // namespace

std::vector<augment::ViewSpec> ViewPlan::views(std::uint64_t seed) const {
  if (mode == "grid") return augment::enumerate_views(rotations, shears);
  return augment::random_views(per_orientation, seed);
}

RunConfig RunConfig::from_json(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("jobs", c.jobs);
  {
    auto s = root.sub("data");
    s.get("cases_dir", c.data.cases_dir);
    s.get("findings_csv", c.data.findings_csv);
    s.get("exclusion_list", c.data.exclusion_list);
    s.finish();
  }
  {
    auto s = root.sub("phantom");
    auto& p = c.phantom;
    s.get("n_cases", p.n_cases);
    s.get("lesions_min", p.lesions_min);
    s.get("lesions_max", p.lesions_max);
    s.get("significant_fraction", p.significant_fraction);
    s.get("contrast_gap", p.contrast_gap);
    s.get("noise_sigma", p.noise_sigma);
    s.get("dims", p.dims);
    s.get("spacing", p.spacing);
    s.finish();
  }
  {
    auto s = root.sub("preprocess");
    s.get("isotropic_spacing", c.preprocess.isotropic_spacing);
    s.get("val_fraction", c.preprocess.val_fraction);
    s.get("rel_threshold", c.preprocess.grow.rel_threshold);
    s.get("max_radius_mm", c.preprocess.grow.max_radius_mm);
    s.get("morph_radius_vox", c.preprocess.grow.morph_radius_vox);
    s.finish();
  }
  {
    auto s = root.sub("augment");
    s.get("channel_sets", c.augment.channel_sets);
    read_views(s.sub("train_views"), c.augment.train_views);
    read_views(s.sub("val_views"), c.augment.val_views);
    s.finish();
  }
  {
    auto s = root.sub("features");
    s.get("gray_levels", c.features.gray_levels);
    s.finish();
  }
  {
    auto s = root.sub("cnn");
    auto& t = c.cnn.train;
    s.get("replicas", c.cnn.replicas);
    s.get("learning_rate", t.learning_rate);
    s.get("weight_decay", t.weight_decay);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("epsilon", t.epsilon);
    s.get("batch_size", t.batch_size);
    s.get("max_steps", t.max_steps);
    s.get("eval_every", t.eval_every);
    s.get("patience", t.patience);
    s.get("mirror", t.mirror);
    s.finish();
  }
  {
    auto s = root.sub("gbm");
    auto& z = c.gbm.zoo;
    s.get("depths", z.depths);
    s.get("learning_rates", z.learning_rates);
    s.get("lambdas", z.lambdas);
    s.get("seeds", z.seeds);
    s.get("n_trees", z.n_trees);
    s.get("min_child_hessian", z.min_child_hessian);
    s.get("subsample", z.subsample);
    s.get("folds", z.folds);
    s.get("select_features", z.select_features);
    s.get("min_features", z.min_features);
    s.get("top_models", c.gbm.top_models);
    s.finish();
  }
  {
    auto s = root.sub("ensemble");
    s.get("max_iters", c.ensemble.max_iters);
    s.get("patience", c.ensemble.patience);
    s.finish();
  }
  root.finish();

  for (std::string* p : {&c.data.cases_dir, &c.data.findings_csv, &c.data.exclusion_list}) {
    if (!p->empty() && fs::path(*p).is_relative() && !base_dir.empty()) *p = (base_dir / *p).lexically_normal().string();
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  return from_json(read_text_file(path), fs::absolute(path).parent_path());
}

std::string RunConfig::to_json() const { return config_json(*this).dump(2) + "\n"; }

void RunConfig::validate() const {
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (data.cases_dir.empty() != data.findings_csv.empty())
    throw ConfigError("data.cases_dir and data.findings_csv must be given together");
  try {
    phantom.validate();
    cnn.train.validate();
    gbm.zoo.validate();
    for (const auto& cs : augment.channel_sets) augment::ChannelSet::parse(cs);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (!(preprocess.val_fraction > 0 && preprocess.val_fraction < 1)) throw ConfigError("preprocess.val_fraction must lie in (0, 1)");
  if (!(preprocess.isotropic_spacing > 0)) throw ConfigError("preprocess.isotropic_spacing must be positive");
  if (augment.channel_sets.empty()) throw ConfigError("augment.channel_sets must not be empty");
  for (const ViewPlan* v : {&augment.train_views, &augment.val_views}) {
    if (v->mode != "random" && v->mode != "grid") throw ConfigError("view mode must be \"random\" or \"grid\"");
    if (v->per_orientation < 1 || v->rotations < 1 || v->shears < 1) throw ConfigError("view counts must be >= 1");
  }
  if (features.gray_levels < 2) throw ConfigError("features.gray_levels must be >= 2");
  if (cnn.replicas < 1) throw ConfigError("cnn.replicas must be >= 1");
  if (gbm.top_models < 1) throw ConfigError("gbm.top_models must be >= 1");
  if (ensemble.max_iters < 1 || ensemble.patience < 1) throw ConfigError("ensemble limits must be >= 1");
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  const std::string hex = sha256_hex(std::to_string(seed) + ":" + tag);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Phantom: return "phantom";
    case Stage::Preprocess: return "preprocess";
    case Stage::Augment: return "augment";
    case Stage::Features: return "features";
    case Stage::TrainCnn: return "train-cnn";
    case Stage::TrainGbm: return "train-gbm";
    case Stage::SelectEnsemble: return "select-ensemble";
    case Stage::Predict: return "predict";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

fs::path stage_dir(const fs::path& out, Stage s) { return out / stage_name(s); }

StageResult run_stage(Stage s, const RunConfig& cfg, const fs::path& out) {
  const fs::path dir = stage_dir(out, s);
  const ojson section = stage_config(s, cfg);
  const std::string config_sha = sha256_hex(section.dump());
  const ojson inputs = hash_files(stage_inputs(s, cfg, out), out);
  const fs::path manifest_path = dir / kManifestName;

  if (fs::exists(manifest_path)) {
    try {
      const auto prev = ojson::parse(read_text_file(manifest_path));
      if (prev.at("config_sha256") == config_sha && prev.at("inputs") == inputs &&
          prev.at("outputs") == hash_files({dir}, out)) {
        StageResult r;
        r.skipped = true;
        r.lines.push_back(std::string(stage_name(s)) + ": up to date");
        return r;
      }
    } catch (const ojson::exception&) {
      // unreadable manifest: fall through and rebuild
    }
  }

  fs::remove_all(dir);
  fs::create_directories(dir);
  StageResult r;
  switch (s) {
    case Stage::Phantom: run_phantom(cfg, dir, r); break;
    case Stage::Preprocess: run_preprocess(cfg, out, dir, r); break;
    case Stage::Augment: run_augment(cfg, out, dir, r); break;
    case Stage::Features: run_features(cfg, out, dir, r); break;
    case Stage::TrainCnn: run_train_cnn(cfg, out, dir, r); break;
    case Stage::TrainGbm: run_train_gbm(cfg, out, dir, r); break;
    case Stage::SelectEnsemble: run_select(cfg, out, dir, r); break;
    case Stage::Predict: run_predict(out, dir, r); break;
    case Stage::Evaluate: run_evaluate(out, dir, r); break;
  }

  ojson m;
  m["stage"] = stage_name(s);
  m["seed"] = cfg.seed;
  m["config_sha256"] = config_sha;
  m["config"] = section;
  m["inputs"] = inputs;
  m["outputs"] = hash_files({dir}, out);
  write_text_file(manifest_path, m.dump(2) + "\n");
  return r;
}

std::vector<StageResult> run_all(const RunConfig& cfg, const fs::path& out) {
  std::vector<Stage> stages{Stage::Preprocess, Stage::Augment,        Stage::Features, Stage::TrainCnn,
                            Stage::TrainGbm,   Stage::SelectEnsemble, Stage::Predict,  Stage::Evaluate};
  if (cfg.data.cases_dir.empty()) stages.insert(stages.begin(), Stage::Phantom);
  std::vector<StageResult> results;
  for (Stage s : stages) results.push_back(run_stage(s, cfg, out));
  return results;
}

namespace {

std::map<ensemble::FindingKey, int> labels_from(const fs::path& findings_csv) {
  std::map<ensemble::FindingKey, int> labels;
  for (const auto& f : volgrid::read_findings_csv(findings_csv))
    if (f.label) labels[{f.case_id, f.finding_id}] = *f.label;
  return labels;
}

std::vector<metrics::RocSeries> series_for(const std::vector<ensemble::ViewPrediction>& views,
                                           const std::map<ensemble::FindingKey, int>& labels,
                                           std::vector<int>* counts) {
  std::map<std::string, std::vector<ensemble::ViewPrediction>> by_model;
  for (const auto& v : views) by_model[v.model_id].push_back(v);
  std::vector<metrics::RocSeries> out;
  for (const auto& [model, vs] : by_model) {
    std::vector<double> scores;
    std::vector<int> y;
    for (const auto& [key, p] : ensemble::multiview_average(vs)) {
      const auto it = labels.find(key);
      if (it == labels.end()) continue;
      scores.push_back(p);
      y.push_back(it->second);
    }
    const auto roc = metrics::roc_auc(scores, y);
    out.push_back({model, roc.curve, roc.auc});
    if (counts) counts->push_back(static_cast<int>(y.size()));
  }
  return out;
}

}  // namespace

std::vector<EvalReport> evaluate_predictions(const fs::path& predictions_csv, const fs::path& findings_csv,
                                             const fs::path& out_dir) {
  std::vector<int> counts;
  const auto series = series_for(ensemble::read_predictions_csv(predictions_csv), labels_from(findings_csv), &counts);
  std::vector<EvalReport> reports;
  ojson summary = ojson::array();
  for (std::size_t i = 0; i < series.size(); ++i) {
    write_text_file(out_dir / ("roc_" + series[i].name + ".csv"), metrics::roc_csv(series[i].curve));
    reports.push_back({series[i].name, series[i].auc, counts[i]});
    summary.push_back({{"model_id", series[i].name}, {"auc", series[i].auc}, {"lesions", counts[i]}});
  }
  write_text_file(out_dir / "roc.svg", metrics::roc_svg(series));
  write_text_file(out_dir / "summary.json", summary.dump(2) + "\n");
  return reports;
}

void roc_plot(const std::vector<fs::path>& predictions, const fs::path& findings_csv, const fs::path& svg_path) {
  const auto labels = labels_from(findings_csv);
  std::vector<metrics::RocSeries> all;
  for (const auto& p : predictions) {
    auto s = series_for(ensemble::read_predictions_csv(p), labels, nullptr);
    all.insert(all.end(), s.begin(), s.end());
  }
  write_text_file(svg_path, metrics::roc_svg(all));
}

}  // namespace lesionkit::pipeline
