#include "lesionkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "lesionkit/error.hpp"

namespace lesionkit::metrics {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels differ in length");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorCode::InvalidArgument, "non-finite score");
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    pos += labels[i] == 1;
  }
  if (pos == 0 || pos == scores.size()) fail(ErrorCode::SingleClassLabels, "ROC needs both classes");
}

}  // namespace

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::uint64_t n_pos = 0;
  for (int l : labels) n_pos += l == 1;
  const std::uint64_t n_neg = labels.size() - n_pos;

  RocResult out;
  out.curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  // Twice the Mann-Whitney U: sum over tie groups of neg_g * (2 * tp_before + pos_g).
  std::uint64_t twice_u = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    std::uint64_t pos_g = 0, neg_g = 0;
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? pos_g : neg_g) += 1;
      ++i;
    }
    twice_u += neg_g * (2 * tp + pos_g);
    tp += pos_g;
    fp += neg_g;
    out.curve.points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                                static_cast<double>(tp) / static_cast<double>(n_pos), s});
  }
  out.auc = static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return out;
}

double auc(std::span<const double> scores, std::span<const int> labels) { return roc_auc(scores, labels).auc; }

SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool called = scores[i] >= threshold;
    if (labels[i] == 1) {
      (called ? tp : fn) += 1;
    } else {
      (called ? fp : tn) += 1;
    }
  }
  return {static_cast<double>(tp) / static_cast<double>(tp + fn), static_cast<double>(tn) / static_cast<double>(tn + fp)};
}

RocPoint youden_optimal(const RocCurve& curve) {
  if (curve.points.empty()) fail(ErrorCode::InvalidArgument, "empty ROC curve");
  RocPoint best = curve.points.front();
  double best_j = best.tpr - best.fpr;
  for (const auto& p : curve.points) {
    const double j = p.tpr - p.fpr;
    // rational ties can differ in the last bit after subtraction
    if (j > best_j + 1e-12 || (std::abs(j - best_j) <= 1e-12 && p.fpr < best.fpr)) {
      best = p;
      best_j = j;
    }
  }
  return best;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::string xml_escape(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : curve.points) {
    out += (std::isinf(p.threshold) ? std::string("inf") : fmt("%.17g", p.threshold)) + "," + fmt("%.17g", p.fpr) +
           "," + fmt("%.17g", p.tpr) + "\n";
  }
  return out;
}

std::string roc_svg(const std::vector<RocSeries>& series) {
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                            "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  constexpr double kSize = 400.0, kLeft = 60.0, kTop = 20.0;
  auto px = [&](double fpr) { return fmt("%.2f", kLeft + fpr * kSize); };
  auto py = [&](double tpr) { return fmt("%.2f", kTop + (1.0 - tpr) * kSize); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"500\" height=\"480\" viewBox=\"0 0 500 480\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"500\" height=\"480\" fill=\"white\"/>\n";
  s += "<rect x=\"60\" y=\"20\" width=\"400\" height=\"400\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = t / 5.0;
    s += "<line x1=\"" + px(v) + "\" y1=\"420.00\" x2=\"" + px(v) + "\" y2=\"425.00\" stroke=\"black\"/>\n";
    s += "<text x=\"" + px(v) + "\" y=\"440\" font-size=\"11\" text-anchor=\"middle\">" + fmt("%.1f", v) + "</text>\n";
    s += "<line x1=\"55.00\" y1=\"" + py(v) + "\" x2=\"60.00\" y2=\"" + py(v) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"50\" y=\"" + py(v) + "\" font-size=\"11\" text-anchor=\"end\" dominant-baseline=\"middle\">" +
         fmt("%.1f", v) + "</text>\n";
  }
  s += "<text x=\"260\" y=\"465\" font-size=\"13\" text-anchor=\"middle\">False positive rate</text>\n";
  s += "<text x=\"18\" y=\"220\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 220)\">"
       "True positive rate</text>\n";
  s += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(1) + "\" y2=\"" + py(1) +
       "\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < series[k].curve.points.size(); ++i) {
      const auto& p = series[k].curve.points[i];
      if (i) s += " ";
      s += px(p.fpr) + "," + py(p.tpr);
    }
    s += "\"/>\n";
    const std::string y = fmt("%.0f", 400.0 - 18.0 * static_cast<double>(series.size() - 1 - k));
    s += "<text x=\"450\" y=\"" + y + "\" font-size=\"12\" text-anchor=\"end\" fill=\"" + color + "\">" +
         xml_escape(series[k].name) + " (AUC = " + fmt("%.4f", series[k].auc) + ")</text>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace lesionkit::metrics
