#pragma once

#include <Eigen/Dense>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cityradar/radar_sim.hpp"

namespace cityradar {

/// Range-azimuth intensity grid: rows are range bins, columns azimuth bins.
struct RAMap {
  Eigen::MatrixXd grid;
  Eigen::VectorXd range_axis;    // m, bin centres
  Eigen::VectorXd azimuth_axis;  // rad, ascending, boresight at n/2
  std::string frame_id;

  /// Per-frame min-max scaling to [0, 1]; constant grids become all-zero.
  void normalize();
};

struct RaWindowing {
  bool hann_fast_time = true;
  bool hann_antenna = false;
};

/// Windowed range FFT, zero-padded antenna FFT, noncoherent sum over chirps.
RAMap cube_to_ra_map(const RadarCube& cube, int n_range_bins, int n_azimuth_bins,
                     const RaWindowing& windowing = {});

struct RangeDopplerMap {
  Eigen::MatrixXd grid;           // [range][doppler]
  Eigen::VectorXd range_axis;     // m
  Eigen::VectorXd velocity_axis;  // m/s, zero velocity at n_chirps/2
};

RangeDopplerMap range_doppler_map(const RadarCube& cube);

/// Radar mounting: ENU position, boresight heading measured counter-clockwise
/// from east, and the radial offset between the map origin and the antenna.
struct SensorPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double heading = 0.0;
  double mount_offset = 0.1;
};

struct RaBin {
  int range = 0;
  int azimuth = 0;
  bool operator==(const RaBin&) const = default;
};

struct PolarPoint {
  double range = 0.0;
  double azimuth = 0.0;
};

/// Sensor polar (map range, azimuth) to ENU; z is the sensor height.
Eigen::Vector3d polar_to_world(double range, double azimuth, const SensorPose& pose);
/// Inverse of polar_to_world using the horizontal components only.
PolarPoint world_to_polar(const Eigen::Vector3d& point, const SensorPose& pose);

Eigen::Vector3d ra_to_world(RaBin bin, const RAMap& map, const SensorPose& pose);
/// Nearest bin, or nullopt when the point lies outside the map's axes.
std::optional<RaBin> world_to_ra(const Eigen::Vector3d& point, const RAMap& map, const SensorPose& pose);

/// Index of the axis entry nearest to `value` (axis ascending).
int nearest_index(const Eigen::VectorXd& axis, double value);

struct TrackOptions {
  double max_step = 1.0;  // m between consecutive frames
  double floor = 0.5;     // peak floor relative to the frame maximum
  SensorPose pose;
};

struct Trajectory {
  std::vector<int> frames;
  std::vector<Eigen::Vector3d> points;
};

/// Greedy nearest-neighbour association of per-frame 3x3 peaks.
std::vector<Trajectory> track_peaks(std::span<const RAMap> maps, const TrackOptions& options);

/// Block-average resize; each output cell averages the input cells whose
/// index range maps onto it (nearest sampling when upsampling).
Eigen::MatrixXd pool_average(const Eigen::MatrixXd& in, int rows, int cols);

}  // namespace cityradar
