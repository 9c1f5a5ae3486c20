#include "cityradar/radar_sim.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "cityradar/errors.hpp"

namespace cityradar {

RadarCube::RadarCube(const WaveformConfig& cfg)
    : cfg_(cfg),
      n_chirps_(cfg.n_chirps_per_frame),
      n_antennas_(cfg.n_virtual()),
      samples_(Samples::Zero(static_cast<Eigen::Index>(cfg.n_chirps_per_frame) * cfg.n_virtual(),
                             cfg.samples_per_chirp)) {}

Eigen::Vector2d polar_to_sensor_xy(double range, double azimuth) {
  return {range * std::cos(azimuth), range * std::sin(azimuth)};
}

void validate_targets(std::span<const PointTarget> targets, double max_range) {
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const PointTarget& t = targets[i];
    const char* problem = nullptr;
    if (!(t.range > 0.0) || t.range > max_range) problem = "outside the unambiguous range";
    else if (std::abs(t.azimuth) > kFieldOfView + 1e-12) problem = "outside the +/-60 deg field of view";
    else if (!(t.amplitude > 0.0)) problem = "has non-positive amplitude";
    if (problem) {
      std::ostringstream os;
      os << "target #" << i << " (range " << t.range << " m, azimuth "
         << t.azimuth * 180.0 / std::numbers::pi << " deg) " << problem;
      throw InvalidArgument(os.str());
    }
  }
}

RadarCube simulate_frame(std::span<const PointTarget> targets, const WaveformConfig& cfg,
                         std::optional<double> snr_db, std::uint64_t seed) {
  const RadarParams params = derive_radar_params(cfg);
  validate_targets(targets, params.unambiguous_range);

  RadarCube cube(cfg);
  const int n_chirps = cube.n_chirps();
  const int n_ant = cube.n_antennas();
  const int n_samp = cube.n_samples();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  using Eigen::VectorXcd;

  VectorXcd fast(n_samp), slow(n_chirps), spatial(n_ant);
  for (const PointTarget& t : targets) {
    // f_b * t_s = (2 B r / (c T_c)) * (s T_c / S) = r s / (dr S)
    const double range_cycles = t.range / (params.range_resolution * n_samp);
    const double doppler_cycles = 2.0 * t.radial_velocity / params.wavelength * cfg.chirp_duration;
    const double spatial_cycles = 0.5 * std::sin(t.azimuth);
    for (int s = 0; s < n_samp; ++s) fast[s] = std::polar(1.0, two_pi * range_cycles * s);
    for (int c = 0; c < n_chirps; ++c) slow[c] = std::polar(t.amplitude, two_pi * doppler_cycles * c);
    for (int a = 0; a < n_ant; ++a) spatial[a] = std::polar(1.0, two_pi * spatial_cycles * a);
    for (int c = 0; c < n_chirps; ++c) {
      for (int a = 0; a < n_ant; ++a) {
        cube.samples().row(c * n_ant + a) += (slow[c] * spatial[a]) * fast.transpose();
      }
    }
  }

  if (snr_db) {
    const double sigma = std::sqrt(std::pow(10.0, -*snr_db / 10.0) / 2.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    auto& x = cube.samples();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index s = 0; s < x.cols(); ++s) {
        const double re = noise(rng);
        const double im = noise(rng);
        x(r, s) += std::complex<double>(re, im);
      }
    }
  }
  return cube;
}

GhostedScene inject_ghost(std::span<const PointTarget> targets, const ReflectorLine& reflector,
                          const GhostOptions& options) {
  const double norm = reflector.normal.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("reflector normal has zero length");
  const Eigen::Vector2d n = reflector.normal / norm;

  GhostedScene scene;
  scene.targets.assign(targets.begin(), targets.end());
  scene.origins.assign(targets.size(), TargetOrigin::direct);

  for (const PointTarget& t : targets) {
    const Eigen::Vector2d p = polar_to_sensor_xy(t.range, t.azimuth);
    const double dist = (p - reflector.point).dot(n);
    const bool on_reflector = std::abs(dist) <= 1e-9 * std::max(1.0, t.range);
    PointTarget ghost = t;
    ghost.amplitude = t.amplitude * options.attenuation;
    if (!on_reflector) {
      const Eigen::Vector2d mirrored = p - 2.0 * dist * n;
      ghost.range = mirrored.norm();
      ghost.azimuth = std::atan2(mirrored.y(), mirrored.x());
    }
    if (!(ghost.range > 0.0) || std::abs(ghost.azimuth) > options.fov) continue;
    if (options.max_range > 0.0 && ghost.range > options.max_range) continue;
    scene.targets.push_back(ghost);
    scene.origins.push_back(on_reflector ? TargetOrigin::ghost_on_reflector : TargetOrigin::ghost);
  }
  return scene;
}

}  // namespace cityradar
