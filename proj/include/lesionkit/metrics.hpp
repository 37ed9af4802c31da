#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace lesionkit::metrics {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  /// Scores >= threshold are called positive. The (0,0) vertex carries +inf.
  double threshold = 0.0;
};

/// Vertices from (0,0) to (1,1); tied scores form a single step.
struct RocCurve {
  std::vector<RocPoint> points;
};

struct RocResult {
  RocCurve curve;
  double auc = 0.0;
};

/// Labels are 0/1. Throws SingleClassLabels unless both classes are present.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const double> scores, std::span<const int> labels);

struct SensSpec {
  double sensitivity = 0.0;
  double specificity = 0.0;
};

SensSpec sens_spec(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Vertex maximizing Youden's J = tpr - fpr; ties go to the lower fpr.
RocPoint youden_optimal(const RocCurve& curve);

/// `threshold,fpr,tpr` rows.
std::string roc_csv(const RocCurve& curve);

struct RocSeries {
  std::string name;
  RocCurve curve;
  double auc = 0.0;
};

/// Self-contained SVG with axes, chance diagonal, one polyline per series and
/// an AUC legend. Output depends only on the inputs.
std::string roc_svg(const std::vector<RocSeries>& series);

}  // namespace lesionkit::metrics
