#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "cityradar/object_class.hpp"
#include "cityradar/waveform.hpp"

namespace cityradar {

/// Half-angle of the sensor's horizontal field of view.
inline constexpr double kFieldOfView = 60.0 * std::numbers::pi / 180.0;

/// Point scatterer in sensor polar coordinates (azimuth 0 at boresight,
/// positive to the left).
struct PointTarget {
  double range = 1.0;
  double azimuth = 0.0;
  double radial_velocity = 0.0;
  double amplitude = 1.0;
  ObjectClass class_label = ObjectClass::car;
};

/// Dechirped baseband samples. Row (chirp * n_antennas + antenna) holds one
/// chirp's fast-time samples for one virtual antenna.
class RadarCube {
 public:
  using Samples = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  RadarCube() = default;
  explicit RadarCube(const WaveformConfig& cfg);

  int n_chirps() const { return n_chirps_; }
  int n_antennas() const { return n_antennas_; }
  int n_samples() const { return static_cast<int>(samples_.cols()); }
  const WaveformConfig& config() const { return cfg_; }

  Samples& samples() { return samples_; }
  const Samples& samples() const { return samples_; }

  std::complex<double>& operator()(int chirp, int antenna, int sample) {
    return samples_(chirp * n_antennas_ + antenna, sample);
  }
  std::complex<double> operator()(int chirp, int antenna, int sample) const {
    return samples_(chirp * n_antennas_ + antenna, sample);
  }

 private:
  WaveformConfig cfg_;
  int n_chirps_ = 0;
  int n_antennas_ = 0;
  Samples samples_;
};

/// Sum of point-target beat signals over an 8-element (n_tx*n_rx) virtual
/// ULA with lambda/2 spacing. When `snr_db` is set, circular complex white
/// Gaussian noise of power 10^(-snr_db/10) per sample is added, i.e. the SNR
/// is relative to a unit-amplitude target.
RadarCube simulate_frame(std::span<const PointTarget> targets, const WaveformConfig& cfg,
                         std::optional<double> snr_db, std::uint64_t seed);

/// Throws InvalidArgument identifying the first target outside the FoV or
/// the unambiguous range, or with non-positive amplitude.
void validate_targets(std::span<const PointTarget> targets, double max_range);

Eigen::Vector2d polar_to_sensor_xy(double range, double azimuth);

/// Multipath mirror: a line in the sensor's ground plane (x boresight, y left).
struct ReflectorLine {
  Eigen::Vector2d point = Eigen::Vector2d::Zero();
  Eigen::Vector2d normal = Eigen::Vector2d::UnitY();
};

struct GhostOptions {
  double attenuation = 0.5;
  double max_range = 0.0;  // 0 disables the range filter
  double fov = kFieldOfView;
};

enum class TargetOrigin { direct, ghost, ghost_on_reflector };

struct GhostedScene {
  std::vector<PointTarget> targets;
  std::vector<TargetOrigin> origins;
};

/// Appends one mirror image per input target. Mirrors outside the FoV or
/// range are dropped; a target lying on the reflector yields a coincident
/// ghost flagged `ghost_on_reflector`.
GhostedScene inject_ghost(std::span<const PointTarget> targets, const ReflectorLine& reflector,
                          const GhostOptions& options = {});

}  // namespace cityradar
