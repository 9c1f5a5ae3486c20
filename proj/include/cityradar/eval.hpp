#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cityradar/detect.hpp"
#include "cityradar/image.hpp"
#include "cityradar/postproc.hpp"

namespace cityradar {

/// Matching thresholds 0.50, 0.55, ..., 0.90.
std::vector<double> ols_thresholds();

struct MatchResult {
  int tp = 0, fp = 0, fn = 0;
  std::vector<int> assignment;  // per detection: matched GT index or -1
};

/// Greedy matching by descending confidence. Each detection claims the
/// unclaimed same-class GT with the highest OLS (s = GT range), if that OLS
/// reaches `threshold`. Confidence ties keep input order; OLS ties pick the
/// lower GT index.
MatchResult match_frame(std::span<const Detection> dets, std::span<const GtAnnotation> gts, double threshold,
                        const KappaTable& kappa);

struct Counts {
  long tp = 0, fp = 0, fn = 0;
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct Score {
  double ap = 1.0, ar = 1.0;
  bool ap_vacuous = false, ar_vacuous = false;  // set when the denominator is zero
};

Score score_of(const Counts& c);

struct ThresholdResult {
  double threshold = 0.0;
  std::array<Counts, kNumClasses> class_counts{};
  std::array<Score, kNumClasses> class_scores{};
  Counts counts;
  Score score;
};

struct EvalReport {
  std::vector<ThresholdResult> per_threshold;
  double map = 0.0;
  double mar = 0.0;
  std::vector<std::string> warnings;

  bool vacuous() const;
  std::string to_json() const;
  std::string to_csv() const;
};

/// Pools counts over all frames (frames are keyed by id, so order does not
/// matter). AP = TP / (TP + FP), AR = TP / (TP + FN).
EvalReport evaluate(std::span<const Detection> dets, std::span<const GtAnnotation> gts, const KappaTable& kappa,
                    const std::vector<double>& thresholds = ols_thresholds());

struct FrameConfMaps {
  std::string frame;
  ConfMaps maps;
};

struct SweepRow {
  double ols_value = 0.0;
  double map = 0.0;
  double mar = 0.0;
  std::size_t detections = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::string> warnings;
  bool trend_violated = false;  // mAP decreased somewhere as the OLS value grew

  std::string to_csv() const;
  RgbImage plot(int width = 480, int height = 320) const;
};

/// L-NMS at each suppression value followed by evaluate. Duplicate values are
/// dropped with a warning.
SweepResult ols_sweep(std::span<const FrameConfMaps> frames, std::span<const GtAnnotation> gts,
                      std::vector<double> ols_values, const KappaTable& kappa, const Eigen::VectorXd& range_axis,
                      const Eigen::VectorXd& azimuth_axis, double peak_threshold = 0.3);

}  // namespace cityradar
