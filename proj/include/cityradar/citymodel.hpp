#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cityradar/ra_map.hpp"

namespace cityradar {

using Triangle = std::array<Eigen::Vector3d, 3>;

struct SemanticObject {
  std::string id;
  std::string class_label;
  int lod = 0;
  std::vector<Triangle> mesh;  // ENU metres
  std::map<std::string, std::string> attributes;
};

struct CityModel {
  std::vector<SemanticObject> objects;

  /// Sorted, de-duplicated class labels; this is the SDM channel order.
  std::vector<std::string> classes() const;
  std::size_t triangle_count() const;
  /// Throws ParseError on duplicate ids, empty labels, bad LOD or
  /// degenerate triangles.
  void validate() const;
};

enum class CityFormat { gml_lite, json };

CityModel parse_city_model(std::string_view document, CityFormat format);
std::string write_city_model(const CityModel& model, CityFormat format);
/// Format chosen by extension: .json is JSON, anything else gml_lite.
CityModel load_city_model(const std::filesystem::path& path);

std::map<std::string, std::vector<Triangle>> group_by_semantics(const CityModel& model);

double triangle_area(const Triangle& t);

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit length
};

/// Moller-Trumbore; returns the ray parameter of a hit in front of the origin.
std::optional<double> intersect(const Ray& ray, const Triangle& tri);

/// Inclusive 2D point-in-triangle test on the triangle's ground footprint.
bool point_in_triangle_xy(const Eigen::Vector2d& p, const Triangle& tri);

/// Pinhole camera co-located with the radar, looking along the pose heading.
struct CameraIntrinsics {
  int width = 256;
  int height = 192;
  double horizontal_fov = 120.0;  // deg, total
  double vertical_fov = 40.0;     // deg, total
};

Ray camera_ray(const SensorPose& pose, const CameraIntrinsics& cam, double u, double v);
/// Continuous pixel coordinates (column, row) of a world point, or nullopt
/// when it lies behind the camera.
std::optional<Eigen::Vector2d> project_to_pixel(const Eigen::Vector3d& point, const SensorPose& pose,
                                                const CameraIntrinsics& cam);

/// Semantic-depth map. `mask` is true where a hit lies within range; masked
/// pixels carry zero semantics and depth 0.
struct Sdm {
  std::vector<std::string> class_names;
  std::vector<Eigen::MatrixXd> semantic;
  Eigen::MatrixXd depth;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> mask;
  double max_range = 35.0;

  int rows() const { return static_cast<int>(depth.rows()); }
  int cols() const { return static_cast<int>(depth.cols()); }
};

inline constexpr double kSdmMaxRange = 35.0;

Sdm raycast_sdm(const CityModel& model, const SensorPose& pose, const CameraIntrinsics& cam,
                double max_range = kSdmMaxRange);

/// Resamples a camera-view SDM onto the RA grid by projecting each bin's
/// ground point (height `ground_z`) into the image.
Sdm warp_sdm_to_ra(const Sdm& sdm, const SensorPose& pose, const CameraIntrinsics& cam,
                   const Eigen::VectorXd& range_axis, const Eigen::VectorXd& azimuth_axis,
                   double ground_z = 0.0);

inline const std::array<std::string, 3> kLaneClasses{"bicycle_lane", "driving_lane", "sidewalk"};

/// Per lane class (kLaneClasses order), 1 where the bin centre lies on the
/// class footprint.
std::vector<Eigen::MatrixXd> project_lanes_to_ra(const CityModel& model, const SensorPose& pose,
                                                 const Eigen::VectorXd& range_axis,
                                                 const Eigen::VectorXd& azimuth_axis);

}  // namespace cityradar
