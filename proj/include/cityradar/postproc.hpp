#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "cityradar/detect.hpp"
#include "cityradar/errors.hpp"
#include "cityradar/object_class.hpp"

namespace cityradar {

struct Detection {
  std::string frame;
  ObjectClass class_label = ObjectClass::car;
  double range = 0.0;    // m
  double azimuth = 0.0;  // rad
  double confidence = 0.0;
  int range_bin = -1;
  int azimuth_bin = -1;
};

/// Object location similarity of two points `d` metres apart, where `s` is
/// the reference distance to the sensor.
template <class Scalar>
Scalar ols(Scalar d, Scalar s, Scalar kappa) {
  if (!(s > Scalar(0))) throw InvalidArgument("ols: reference range must be positive");
  if (!(kappa > Scalar(0))) throw InvalidArgument("ols: kappa must be positive");
  if (d < Scalar(0)) throw InvalidArgument("ols: distance must be non-negative");
  const Scalar w = s * kappa;
  return std::exp(-(d * d) / (Scalar(2) * w * w));
}

/// Cartesian distance between two polar points in the sensor plane.
double polar_distance(double range_a, double azimuth_a, double range_b, double azimuth_b);

struct NmsOptions {
  double peak_threshold = 0.3;
  double ols_threshold = 0.8;
};

/// Strict 3x3 local maxima (plateaus resolved towards the lowest (i, j)).
std::vector<std::pair<int, int>> local_maxima(const Eigen::MatrixXd& map, double threshold);

/// Peaks per class, greedily suppressed by OLS against the higher-confidence
/// kept peak. Peaks at zero range are skipped since OLS is undefined there.
std::vector<Detection> l_nms(const ConfMaps& maps, const Eigen::VectorXd& range_axis,
                             const Eigen::VectorXd& azimuth_axis, const KappaTable& kappa,
                             const NmsOptions& options = {}, const std::string& frame = {});

}  // namespace cityradar
