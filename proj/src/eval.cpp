#include "cityradar/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cityradar {

std::vector<double> ols_thresholds() {
  std::vector<double> t;
  for (int k = 0; k <= 8; ++k) t.push_back(0.5 + 0.05 * k);
  return t;
}

MatchResult match_frame(std::span<const Detection> dets, std::span<const GtAnnotation> gts, double threshold,
                        const KappaTable& kappa) {
  MatchResult r;
  r.assignment.assign(dets.size(), -1);
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t k : order) {
    const Detection& d = dets[k];
    int best = -1;
    double best_ols = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || gts[g].class_label != d.class_label) continue;
      const double dist = polar_distance(d.range, d.azimuth, gts[g].range, gts[g].azimuth);
      const double s = ols(dist, gts[g].range, kappa[d.class_label]);
      if (s > best_ols) {
        best_ols = s;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_ols >= threshold) {
      claimed[best] = true;
      r.assignment[k] = best;
      ++r.tp;
    } else {
      ++r.fp;
    }
  }
  r.fn = static_cast<int>(std::count(claimed.begin(), claimed.end(), false));
  return r;
}

Score score_of(const Counts& c) {
  Score s;
  if (c.tp + c.fp == 0) s.ap_vacuous = true;
  else s.ap = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn == 0) s.ar_vacuous = true;
  else s.ar = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return s;
}

bool EvalReport::vacuous() const {
  return std::any_of(per_threshold.begin(), per_threshold.end(),
                     [](const ThresholdResult& t) { return t.score.ap_vacuous || t.score.ar_vacuous; });
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["map"] = map;
  j["mar"] = mar;
  j["vacuous"] = vacuous();
  j["warnings"] = warnings;
  auto& rows = j["per_threshold"] = nlohmann::ordered_json::array();
  for (const auto& t : per_threshold) {
    nlohmann::ordered_json row;
    row["threshold"] = t.threshold;
    row["ap"] = t.score.ap;
    row["ar"] = t.score.ar;
    row["tp"] = t.counts.tp;
    row["fp"] = t.counts.fp;
    row["fn"] = t.counts.fn;
    for (ObjectClass c : kObjectClasses) {
      const auto k = index_of(c);
      row["classes"][std::string(to_string(c))] = {{"ap", t.class_scores[k].ap},
                                      {"ar", t.class_scores[k].ar},
                                      {"ap_vacuous", t.class_scores[k].ap_vacuous},
                                      {"ar_vacuous", t.class_scores[k].ar_vacuous},
                                      {"tp", t.class_counts[k].tp},
                                      {"fp", t.class_counts[k].fp},
                                      {"fn", t.class_counts[k].fn}};
    }
    rows.push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "threshold,class,ap,ar,tp,fp,fn\n";
  auto line = [&](double thr, std::string_view cls, const Score& s, const Counts& c) {
    os << thr << ',' << cls << ',' << s.ap << ',' << s.ar << ',' << c.tp << ',' << c.fp << ',' << c.fn << '\n';
  };
  for (const auto& t : per_threshold) {
    for (ObjectClass c : kObjectClasses) line(t.threshold, to_string(c), t.class_scores[index_of(c)], t.class_counts[index_of(c)]);
    line(t.threshold, "all", t.score, t.counts);
  }
  return os.str();
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GtAnnotation> gts, const KappaTable& kappa,
                    const std::vector<double>& thresholds) {
  kappa.validate();
  if (thresholds.empty()) throw InvalidArgument("evaluate: no thresholds");
  // Canonical per-frame ordering so results do not depend on input order.
  std::map<std::string, std::pair<std::vector<Detection>, std::vector<GtAnnotation>>> frames;
  for (const auto& d : dets) frames[d.frame].first.push_back(d);
  for (const auto& g : gts) frames[g.frame].second.push_back(g);
  for (auto& [id, f] : frames) {
    std::sort(f.first.begin(), f.first.end(), [](const Detection& a, const Detection& b) {
      return std::tuple(-a.confidence, a.class_label, a.range, a.azimuth) <
             std::tuple(-b.confidence, b.class_label, b.range, b.azimuth);
    });
    std::sort(f.second.begin(), f.second.end(), [](const GtAnnotation& a, const GtAnnotation& b) {
      return std::tuple(a.class_label, a.range, a.azimuth) < std::tuple(b.class_label, b.range, b.azimuth);
    });
  }

  EvalReport report;
  // Extended accumulators keep the mean of identical values exact.
  long double map_sum = 0.0L, mar_sum = 0.0L;
  for (double thr : thresholds) {
    ThresholdResult t;
    t.threshold = thr;
    for (const auto& [id, f] : frames) {
      for (ObjectClass c : kObjectClasses) {
        std::vector<Detection> cd;
        std::vector<GtAnnotation> cg;
        std::copy_if(f.first.begin(), f.first.end(), std::back_inserter(cd),
                     [&](const Detection& d) { return d.class_label == c; });
        std::copy_if(f.second.begin(), f.second.end(), std::back_inserter(cg),
                     [&](const GtAnnotation& g) { return g.class_label == c; });
        const MatchResult m = match_frame(cd, cg, thr, kappa);
        t.class_counts[index_of(c)] += Counts{m.tp, m.fp, m.fn};
      }
    }
    for (ObjectClass c : kObjectClasses) {
      t.class_scores[index_of(c)] = score_of(t.class_counts[index_of(c)]);
      t.counts += t.class_counts[index_of(c)];
    }
    t.score = score_of(t.counts);
    map_sum += t.score.ap;
    mar_sum += t.score.ar;
    report.per_threshold.push_back(t);
  }
  report.map = static_cast<double>(map_sum / static_cast<long double>(thresholds.size()));
  report.mar = static_cast<double>(mar_sum / static_cast<long double>(thresholds.size()));
  if (report.vacuous()) report.warnings.push_back("zero denominator in AP or AR; value taken as 1.0");
  return report;
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os << "ols,map,mar,detections\n";
  for (const auto& r : rows) os << r.ols_value << ',' << r.map << ',' << r.mar << ',' << r.detections << '\n';
  return os.str();
}

RgbImage SweepResult::plot(int width, int height) const {
  RgbImage img(width, height);
  const int m = 24;
  const Rgb axis{0, 0, 0}, ap_color{200, 30, 30}, ar_color{30, 30, 200};
  img.draw_line(m, height - m, width - m, height - m, axis);
  img.draw_line(m, m, m, height - m, axis);
  if (rows.empty()) return img;
  const double lo = rows.front().ols_value, hi = rows.back().ols_value;
  auto px = [&](double ols_value, double y) {
    const double t = hi > lo ? (ols_value - lo) / (hi - lo) : 0.5;
    return std::pair{m + static_cast<int>(std::lround(t * (width - 2 * m))),
                     height - m - static_cast<int>(std::lround(std::clamp(y, 0.0, 1.0) * (height - 2 * m)))};
  };
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto [xa, ya] = px(rows[k].ols_value, rows[k].map);
    const auto [xr, yr] = px(rows[k].ols_value, rows[k].mar);
    img.fill_rect(xa - 2, ya - 2, xa + 2, ya + 2, ap_color);
    img.fill_rect(xr - 2, yr - 2, xr + 2, yr + 2, ar_color);
    if (k > 0) {
      const auto [pa, qa] = px(rows[k - 1].ols_value, rows[k - 1].map);
      const auto [pr, qr] = px(rows[k - 1].ols_value, rows[k - 1].mar);
      img.draw_line(pa, qa, xa, ya, ap_color);
      img.draw_line(pr, qr, xr, yr, ar_color);
    }
  }
  return img;
}

SweepResult ols_sweep(std::span<const FrameConfMaps> frames, std::span<const GtAnnotation> gts,
                      std::vector<double> ols_values, const KappaTable& kappa, const Eigen::VectorXd& range_axis,
                      const Eigen::VectorXd& azimuth_axis, double peak_threshold) {
  SweepResult result;
  for (double v : ols_values) {
    if (!(v > 0.0 && v < 1.0)) throw InvalidArgument("ols_sweep: values must lie in (0, 1)");
  }
  const std::size_t requested = ols_values.size();
  std::sort(ols_values.begin(), ols_values.end());
  ols_values.erase(std::unique(ols_values.begin(), ols_values.end()), ols_values.end());
  if (ols_values.size() != requested) {
    result.warnings.push_back("ols_sweep: dropped " + std::to_string(requested - ols_values.size()) +
                              " duplicate OLS value(s)");
  }
  for (double v : ols_values) {
    std::vector<Detection> dets;
    for (const auto& f : frames) {
      auto d = l_nms(f.maps, range_axis, azimuth_axis, kappa, {peak_threshold, v}, f.frame);
      dets.insert(dets.end(), d.begin(), d.end());
    }
    const EvalReport r = evaluate(dets, gts, kappa);
    result.rows.push_back({v, r.map, r.mar, dets.size()});
  }
  for (std::size_t k = 1; k < result.rows.size(); ++k) {
    if (result.rows[k].map < result.rows[k - 1].map) result.trend_violated = true;
  }
  if (result.trend_violated) result.warnings.push_back("ols_sweep: mAP is not monotone in the OLS value");
  return result;
}

}  // namespace cityradar
