#include "lesionkit/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lesionkit/error.hpp"
#include "lesionkit/metrics.hpp"
#include "lesionkit/util.hpp"

namespace lesionkit::ensemble {

void PredictionTable::validate() const {
  if (model_ids.empty()) fail(ErrorCode::InvalidArgument, "prediction table has no models");
  if (probs.size() != model_ids.size()) fail(ErrorCode::ShapeMismatch, "one prediction row per model required");
  for (const auto& row : probs) {
    if (row.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "prediction row length differs from label count");
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::InvalidArgument, "probabilities must lie in [0, 1]");
    }
  }
  bool pos = false, neg = false;
  for (int l : labels) {
    pos = pos || l == 1;
    neg = neg || l == 0;
  }
  if (!pos || !neg) fail(ErrorCode::SingleClassLabels, "ensemble selection needs both classes");
}

namespace {

std::vector<double> blend(const std::vector<std::vector<double>>& probs, const std::vector<int>& counts, int extra) {
  const std::size_t n = probs.front().size();
  std::vector<double> sum(n, 0.0);
  int total = 0;
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const int c = counts[m] + (static_cast<int>(m) == extra ? 1 : 0);
    if (c == 0) continue;
    total += c;
    for (std::size_t i = 0; i < n; ++i) sum[i] += c * probs[m][i];
  }
  for (double& s : sum) s /= total;
  return sum;
}

}  // namespace

Selection greedy_select(const PredictionTable& table, int max_iters, int patience) {
  table.validate();
  if (max_iters < 1 || patience < 1) fail(ErrorCode::InvalidArgument, "max_iters and patience must be >= 1");
  const int n_models = static_cast<int>(table.model_ids.size());

  Selection out;
  std::vector<int> counts(n_models, 0);
  double current = -1.0;
  int stalls = 0;
  for (int iter = 0; iter < max_iters; ++iter) {
    int best_m = -1;
    double best_auc = -1.0;
    for (int m = 0; m < n_models; ++m) {
      const double a = metrics::auc(blend(table.probs, counts, m), table.labels);
      if (a > best_auc) {
        best_auc = a;
        best_m = m;
      }
    }
    if (iter > 0 && best_auc < current) break;  // nothing keeps the AUC; the state would never change
    const double gain = best_auc - current;
    counts[best_m] += 1;
    out.picks.push_back(best_m);
    out.auc_trace.push_back(best_auc);
    current = best_auc;
    if (iter == 0) continue;
    stalls = gain < kConvergenceTol ? stalls + 1 : 0;
    if (stalls >= patience) break;
  }

  int total = 0;
  for (int c : counts) total += c;
  out.weights.model_ids = table.model_ids;
  out.weights.counts = counts;
  for (int c : counts) out.weights.weights.push_back(static_cast<double>(c) / total);
  return out;
}

std::vector<double> ensemble_predict(const EnsembleWeights& weights,
                                     const std::map<std::string, std::vector<double>>& per_model) {
  if (weights.model_ids.size() != weights.weights.size()) fail(ErrorCode::ShapeMismatch, "malformed weights");
  std::vector<double> out;
  bool first = true;
  for (std::size_t m = 0; m < weights.model_ids.size(); ++m) {
    if (weights.weights[m] == 0.0) continue;
    const auto it = per_model.find(weights.model_ids[m]);
    if (it == per_model.end()) fail(ErrorCode::UnknownModelId, "no predictions for model '" + weights.model_ids[m] + "'");
    if (first) {
      out.assign(it->second.size(), 0.0);
      first = false;
    }
    if (it->second.size() != out.size()) fail(ErrorCode::ShapeMismatch, "prediction lengths differ between models");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights.weights[m] * it->second[i];
  }
  for (double& p : out) p = std::clamp(p, 0.0, 1.0);
  return out;
}

std::map<FindingKey, double> multiview_average(const std::vector<ViewPrediction>& views) {
  std::map<FindingKey, std::vector<std::pair<int, double>>> groups;
  for (const auto& v : views) groups[{v.case_id, v.finding_id}].emplace_back(v.view_index, v.probability);
  std::map<FindingKey, double> out;
  for (auto& [key, items] : groups) {
    std::sort(items.begin(), items.end());
    double sum = 0.0;
    for (const auto& [idx, p] : items) sum += p;
    out[key] = sum / static_cast<double>(items.size());
  }
  return out;
}

std::map<FindingKey, double> multiview_average(const std::vector<ViewPrediction>& views,
                                               const std::vector<FindingKey>& expected) {
  auto out = multiview_average(views);
  for (const auto& key : expected) {
    if (!out.count(key)) {
      fail(ErrorCode::EmptyGroup, "no view predictions for " + key.first + "/" + std::to_string(key.second));
    }
  }
  return out;
}

PredictionTable build_table(const std::vector<ViewPrediction>& views, const std::map<FindingKey, int>& labels) {
  std::map<std::string, std::vector<ViewPrediction>> by_model;
  for (const auto& v : views) by_model[v.model_id].push_back(v);
  std::vector<FindingKey> keys;
  PredictionTable table;
  for (const auto& [key, label] : labels) {
    keys.push_back(key);
    table.labels.push_back(label);
  }
  for (const auto& [model, vs] : by_model) {
    const auto avg = multiview_average(vs, keys);
    std::vector<double> row;
    row.reserve(keys.size());
    for (const auto& key : keys) row.push_back(avg.at(key));
    table.model_ids.push_back(model);
    table.probs.push_back(std::move(row));
  }
  return table;
}

void write_predictions_csv(const std::vector<ViewPrediction>& views, const std::filesystem::path& path) {
  std::string out = "model_id,case_id,finding_id,view_index,probability\n";
  for (const auto& v : views) {
    out += v.model_id + "," + v.case_id + "," + std::to_string(v.finding_id) + "," + std::to_string(v.view_index) +
           "," + format_double(v.probability) + "\n";
  }
  write_text_file(path, out);
}

std::vector<ViewPrediction> read_predictions_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "model_id,case_id,finding_id,view_index,probability") {
    fail(ErrorCode::MalformedHeader, "unexpected prediction header '" + line + "'");
  }
  std::vector<ViewPrediction> out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) f.push_back(field);
    if (f.size() != 5) fail(ErrorCode::MalformedHeader, "prediction row needs 5 fields: '" + line + "'");
    try {
      out.push_back({f[0], f[1], std::stoi(f[2]), std::stoi(f[3]), std::stod(f[4])});
    } catch (const std::exception&) {
      fail(ErrorCode::MalformedHeader, "bad prediction row '" + line + "'");
    }
  }
  return out;
}

void write_selection(const Selection& selection, const std::filesystem::path& path) {
  nlohmann::json j;
  j["model_ids"] = selection.weights.model_ids;
  j["counts"] = selection.weights.counts;
  j["weights"] = selection.weights.weights;
  j["auc_trace"] = selection.auc_trace;
  j["picks"] = selection.picks;
  write_text_file(path, j.dump(2) + "\n");
}

Selection read_selection(const std::filesystem::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_text_file(path));
    Selection s;
    s.weights.model_ids = j.at("model_ids").get<std::vector<std::string>>();
    s.weights.counts = j.at("counts").get<std::vector<int>>();
    s.weights.weights = j.at("weights").get<std::vector<double>>();
    s.auc_trace = j.at("auc_trace").get<std::vector<double>>();
    if (j.contains("picks")) s.picks = j.at("picks").get<std::vector<int>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
}

}  // namespace lesionkit::ensemble
