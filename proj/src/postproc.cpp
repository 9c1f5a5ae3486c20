#include "cityradar/postproc.hpp"

#include <algorithm>

namespace cityradar {

double polar_distance(double range_a, double azimuth_a, double range_b, double azimuth_b) {
  const double dx = range_a * std::cos(azimuth_a) - range_b * std::cos(azimuth_b);
  const double dy = range_a * std::sin(azimuth_a) - range_b * std::sin(azimuth_b);
  return std::hypot(dx, dy);
}

std::vector<std::pair<int, int>> local_maxima(const Eigen::MatrixXd& map, double threshold) {
  std::vector<std::pair<int, int>> peaks;
  const int H = static_cast<int>(map.rows()), W = static_cast<int>(map.cols());
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const double v = map(i, j);
      if (!(v >= threshold)) continue;
      bool is_peak = true;
      for (int di = -1; di <= 1 && is_peak; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          if ((di == 0 && dj == 0) || ii < 0 || jj < 0 || ii >= H || jj >= W) continue;
          const double n = map(ii, jj);
          // On a tie the lexicographically smaller cell wins.
          if (n > v || (n == v && std::pair(ii, jj) < std::pair(i, j))) {
            is_peak = false;
            break;
          }
        }
      }
      if (is_peak) peaks.emplace_back(i, j);
    }
  }
  return peaks;
}

std::vector<Detection> l_nms(const ConfMaps& maps, const Eigen::VectorXd& range_axis,
                             const Eigen::VectorXd& azimuth_axis, const KappaTable& kappa,
                             const NmsOptions& options, const std::string& frame) {
  if (options.peak_threshold < 0.0 || options.peak_threshold > 1.0 || options.ols_threshold < 0.0 ||
      options.ols_threshold > 1.0) {
    throw InvalidArgument("l_nms: thresholds must lie in [0, 1]");
  }
  if (maps.rows() != range_axis.size() || maps.cols() != azimuth_axis.size()) {
    throw InvalidArgument("l_nms: axes do not match the confidence maps");
  }
  std::vector<Detection> out;
  for (std::size_t c = 0; c < maps.channels.size(); ++c) {
    const auto cls = static_cast<ObjectClass>(c);
    const Eigen::MatrixXd& ch = maps.channels[c];
    std::vector<Detection> peaks;
    for (auto [i, j] : local_maxima(ch, options.peak_threshold)) {
      if (!(range_axis[i] > 0.0)) continue;
      peaks.push_back({frame, cls, range_axis[i], azimuth_axis[j], std::clamp(ch(i, j), 0.0, 1.0), i, j});
    }
    std::stable_sort(peaks.begin(), peaks.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const Detection& p : peaks) {
      const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
        const double d = polar_distance(k.range, k.azimuth, p.range, p.azimuth);
        return ols(d, k.range, kappa[cls]) > options.ols_threshold;
      });
      if (!suppressed) kept.push_back(p);
    }
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

}  // namespace cityradar
