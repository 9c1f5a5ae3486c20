#include "cityradar/ra_map.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unsupported/Eigen/FFT>

#include "cityradar/errors.hpp"

namespace cityradar {

namespace {

Eigen::VectorXd hann(int n) {
  Eigen::VectorXd w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (n - 1)));
  return w;
}

Eigen::VectorXd range_axis_for(const RadarParams& params, int n_bins) {
  return Eigen::VectorXd::LinSpaced(n_bins, 0.0, params.range_resolution * (n_bins - 1));
}

// Range FFT of every (chirp, antenna) row.
RadarCube::Samples range_fft(const RadarCube& cube, bool use_hann) {
  const int n_samp = cube.n_samples();
  const Eigen::VectorXd w = use_hann ? hann(n_samp) : Eigen::VectorXd::Ones(n_samp);
  Eigen::FFT<double> fft;
  RadarCube::Samples out(cube.samples().rows(), n_samp);
  Eigen::VectorXcd in(n_samp), spec(n_samp);
  for (Eigen::Index r = 0; r < cube.samples().rows(); ++r) {
    in = cube.samples().row(r).transpose().cwiseProduct(w.cast<std::complex<double>>());
    fft.fwd(spec, in);
    out.row(r) = spec.transpose();
  }
  return out;
}

}  // namespace

void RAMap::normalize() {
  if (grid.size() == 0) return;
  const double lo = grid.minCoeff();
  const double hi = grid.maxCoeff();
  if (hi > lo) grid = (grid.array() - lo) / (hi - lo);
  else grid.setZero();
}

RAMap cube_to_ra_map(const RadarCube& cube, int n_range_bins, int n_azimuth_bins,
                     const RaWindowing& windowing) {
  const int n_ant = cube.n_antennas();
  if (n_range_bins <= 0 || n_range_bins > cube.n_samples()) {
    throw InvalidArgument("cube_to_ra_map: n_range_bins must be in [1, samples_per_chirp]");
  }
  if (n_azimuth_bins < n_ant) throw InvalidArgument("cube_to_ra_map: n_azimuth_bins must be >= n_virtual");
  if (cube.samples().rows() != static_cast<Eigen::Index>(cube.n_chirps()) * n_ant) {
    throw InvalidArgument("cube_to_ra_map: cube dimensions inconsistent with its configuration");
  }
  const RadarParams params = derive_radar_params(cube.config());
  const RadarCube::Samples rfft = range_fft(cube, windowing.hann_fast_time);

  const Eigen::VectorXd aw = windowing.hann_antenna ? hann(n_ant) : Eigen::VectorXd::Ones(n_ant);
  Eigen::FFT<double> fft;
  Eigen::VectorXcd padded(n_azimuth_bins), spec(n_azimuth_bins);
  Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(n_range_bins, n_azimuth_bins);
  const int half = n_azimuth_bins / 2;
  for (int c = 0; c < cube.n_chirps(); ++c) {
    for (int r = 0; r < n_range_bins; ++r) {
      padded.setZero();
      for (int a = 0; a < n_ant; ++a) padded[a] = rfft(c * n_ant + a, r) * aw[a];
      fft.fwd(spec, padded);
      for (int k = 0; k < n_azimuth_bins; ++k) {
        grid(r, (k + half) % n_azimuth_bins) += std::abs(spec[k]);
      }
    }
  }

  RAMap map;
  map.grid = std::move(grid);
  map.range_axis = range_axis_for(params, n_range_bins);
  map.azimuth_axis.resize(n_azimuth_bins);
  // lambda/2 spacing: spatial frequency k/N cycles per element <=> sin(az) = 2k/N.
  for (int j = 0; j < n_azimuth_bins; ++j) {
    const double s = 2.0 * (j - half) / n_azimuth_bins;
    map.azimuth_axis[j] = std::asin(std::clamp(s, -1.0, 1.0));
  }
  return map;
}

RangeDopplerMap range_doppler_map(const RadarCube& cube) {
  const int n_chirps = cube.n_chirps();
  if (n_chirps < 2) throw InvalidArgument("range_doppler_map: needs at least two chirps");
  const int n_ant = cube.n_antennas();
  const int n_samp = cube.n_samples();
  const RadarParams params = derive_radar_params(cube.config());
  const RadarCube::Samples rfft = range_fft(cube, true);

  Eigen::FFT<double> fft;
  Eigen::VectorXcd slow(n_chirps), spec(n_chirps);
  Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(n_samp, n_chirps);
  const int half = n_chirps / 2;
  for (int a = 0; a < n_ant; ++a) {
    for (int r = 0; r < n_samp; ++r) {
      for (int c = 0; c < n_chirps; ++c) slow[c] = rfft(c * n_ant + a, r);
      fft.fwd(spec, slow);
      for (int k = 0; k < n_chirps; ++k) {
        // Frequencies above Nyquist are negative velocities.
        const int freq = k <= (n_chirps - 1) / 2 ? k : k - n_chirps;
        grid(r, freq + half) += std::abs(spec[k]);
      }
    }
  }
  RangeDopplerMap rd;
  rd.grid = std::move(grid);
  rd.range_axis = range_axis_for(params, n_samp);
  rd.velocity_axis.resize(n_chirps);
  for (int j = 0; j < n_chirps; ++j) rd.velocity_axis[j] = (j - half) * params.velocity_resolution;
  return rd;
}

Eigen::Vector3d polar_to_world(double range, double azimuth, const SensorPose& pose) {
  const double rho = range + pose.mount_offset;
  const double bearing = pose.heading + azimuth;
  return pose.position + Eigen::Vector3d(rho * std::cos(bearing), rho * std::sin(bearing), 0.0);
}

PolarPoint world_to_polar(const Eigen::Vector3d& point, const SensorPose& pose) {
  const Eigen::Vector2d rel = (point - pose.position).head<2>();
  const double bearing = std::atan2(rel.y(), rel.x()) - pose.heading;
  return {rel.norm() - pose.mount_offset, std::remainder(bearing, 2.0 * std::numbers::pi)};
}

Eigen::Vector3d ra_to_world(RaBin bin, const RAMap& map, const SensorPose& pose) {
  if (bin.range < 0 || bin.range >= map.range_axis.size() || bin.azimuth < 0 ||
      bin.azimuth >= map.azimuth_axis.size()) {
    throw InvalidArgument("ra_to_world: bin (" + std::to_string(bin.range) + ", " +
                          std::to_string(bin.azimuth) + ") outside the map");
  }
  return polar_to_world(map.range_axis[bin.range], map.azimuth_axis[bin.azimuth], pose);
}

int nearest_index(const Eigen::VectorXd& axis, double value) {
  const auto begin = axis.data();
  const auto end = axis.data() + axis.size();
  const auto it = std::lower_bound(begin, end, value);
  if (it == begin) return 0;
  if (it == end) return static_cast<int>(axis.size() - 1);
  const auto prev = it - 1;
  return static_cast<int>((value - *prev <= *it - value) ? prev - begin : it - begin);
}

namespace {

double half_step(const Eigen::VectorXd& axis, bool at_end) {
  if (axis.size() < 2) return 0.0;
  const Eigen::Index n = axis.size();
  return 0.5 * (at_end ? axis[n - 1] - axis[n - 2] : axis[1] - axis[0]);
}

}  // namespace

std::optional<RaBin> world_to_ra(const Eigen::Vector3d& point, const RAMap& map, const SensorPose& pose) {
  const PolarPoint p = world_to_polar(point, pose);
  const auto& ra = map.range_axis;
  const auto& az = map.azimuth_axis;
  if (ra.size() == 0 || az.size() == 0) return std::nullopt;
  if (p.range < ra[0] - half_step(ra, false) || p.range > ra[ra.size() - 1] + half_step(ra, true)) {
    return std::nullopt;
  }
  if (p.azimuth < az[0] - half_step(az, false) || p.azimuth > az[az.size() - 1] + half_step(az, true)) {
    return std::nullopt;
  }
  return RaBin{nearest_index(ra, p.range), nearest_index(az, p.azimuth)};
}

std::vector<Trajectory> track_peaks(std::span<const RAMap> maps, const TrackOptions& options) {
  std::vector<Trajectory> tracks;
  if (maps.empty()) return tracks;
  for (const RAMap& m : maps) {
    if (m.grid.rows() != maps[0].grid.rows() || m.grid.cols() != maps[0].grid.cols() ||
        m.range_axis != maps[0].range_axis || m.azimuth_axis != maps[0].azimuth_axis) {
      throw InvalidArgument("track_peaks: maps must share axes");
    }
  }

  std::vector<std::size_t> active;
  for (std::size_t f = 0; f < maps.size(); ++f) {
    const Eigen::MatrixXd& g = maps[f].grid;
    const double top = g.size() ? g.maxCoeff() : 0.0;
    std::vector<Eigen::Vector3d> peaks;
    if (top > 0.0) {
      for (int i = 0; i < g.rows(); ++i) {
        for (int j = 0; j < g.cols(); ++j) {
          const double v = g(i, j);
          if (v < options.floor * top) continue;
          bool is_peak = true;
          for (int di = -1; di <= 1 && is_peak; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              const int ii = i + di, jj = j + dj;
              if ((di || dj) && ii >= 0 && jj >= 0 && ii < g.rows() && jj < g.cols() && g(ii, jj) > v) {
                is_peak = false;
                break;
              }
            }
          }
          if (is_peak) peaks.push_back(ra_to_world({i, j}, maps[f], options.pose));
        }
      }
    }

    struct Candidate {
      double dist;
      std::size_t track;
      std::size_t peak;
    };
    std::vector<Candidate> candidates;
    for (std::size_t t : active) {
      for (std::size_t p = 0; p < peaks.size(); ++p) {
        const double d = (tracks[t].points.back() - peaks[p]).head<2>().norm();
        if (d <= options.max_step) candidates.push_back({d, t, p});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.dist < b.dist; });
    std::vector<bool> track_used(tracks.size(), false), peak_used(peaks.size(), false);
    std::vector<std::size_t> next_active;
    for (const Candidate& c : candidates) {
      if (track_used[c.track] || peak_used[c.peak]) continue;
      track_used[c.track] = peak_used[c.peak] = true;
      tracks[c.track].frames.push_back(static_cast<int>(f));
      tracks[c.track].points.push_back(peaks[c.peak]);
      next_active.push_back(c.track);
    }
    for (std::size_t p = 0; p < peaks.size(); ++p) {
      if (peak_used[p]) continue;
      tracks.push_back({{static_cast<int>(f)}, {peaks[p]}});
      next_active.push_back(tracks.size() - 1);
    }
    active = std::move(next_active);
  }
  return tracks;
}

Eigen::MatrixXd pool_average(const Eigen::MatrixXd& in, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw InvalidArgument("pool_average: output shape must be positive");
  Eigen::MatrixXd out(rows, cols);
  const Eigen::Index R = in.rows(), C = in.cols();
  if (R == 0 || C == 0) return Eigen::MatrixXd::Zero(rows, cols);
  for (int r = 0; r < rows; ++r) {
    Eigen::Index r0 = r * R / rows, r1 = (r + 1) * R / rows;
    if (r1 <= r0) r1 = r0 + 1;
    for (int c = 0; c < cols; ++c) {
      Eigen::Index c0 = c * C / cols, c1 = (c + 1) * C / cols;
      if (c1 <= c0) c1 = c0 + 1;
      out(r, c) = in.block(r0, c0, r1 - r0, c1 - c0).mean();
    }
  }
  return out;
}

}  // namespace cityradar
