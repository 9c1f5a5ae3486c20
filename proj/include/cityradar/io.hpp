#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cityradar/citymodel.hpp"
#include "cityradar/detect.hpp"
#include "cityradar/nn.hpp"
#include "cityradar/postproc.hpp"
#include "cityradar/ra_map.hpp"
#include "cityradar/radar_sim.hpp"

namespace cityradar {

// RDC1: "RDC1", u32 chirps, antennas, samples, then (re, im) f32 pairs.
void write_rdc1(std::ostream& os, const RadarCube& cube);
void write_rdc1(const std::filesystem::path& path, const RadarCube& cube);
/// Dimensions must agree with `cfg`.
RadarCube read_rdc1(std::istream& is, const WaveformConfig& cfg);
RadarCube read_rdc1(const std::filesystem::path& path, const WaveformConfig& cfg);

// FMAP: "FMAP", u32 channels, rows, cols, then row-major f32 per channel.
void write_fmap(std::ostream& os, const MapStack& maps);
void write_fmap(const std::filesystem::path& path, const MapStack& maps);
MapStack read_fmap(std::istream& is);
MapStack read_fmap(const std::filesystem::path& path);

/// Sidecar path for `fmap`: same stem with ".json".
std::filesystem::path sidecar_path(const std::filesystem::path& fmap);

void write_ramap(const std::filesystem::path& path, const RAMap& map);
RAMap read_ramap(const std::filesystem::path& path);

void write_confmaps(const std::filesystem::path& path, const ConfMaps& maps, const Eigen::VectorXd& range_axis,
                    const Eigen::VectorXd& azimuth_axis, const std::string& frame = {});
struct LoadedConfMaps {
  ConfMaps maps;
  Eigen::VectorXd range_axis;
  Eigen::VectorXd azimuth_axis;
  std::string frame;
};
LoadedConfMaps read_confmaps(const std::filesystem::path& path);

/// Channels: semantic one-hots, depth, mask (0/1).
void write_sdm(const std::filesystem::path& path, const Sdm& sdm);
Sdm read_sdm(const std::filesystem::path& path);

// JSON lines. Azimuth is stored in degrees.
std::string annotation_line(const GtAnnotation& a);
std::string detection_line(const Detection& d);
void write_annotations(std::ostream& os, std::span<const GtAnnotation> annotations);
void write_detections(std::ostream& os, std::span<const Detection> detections);
std::vector<GtAnnotation> read_annotations(std::istream& is);
std::vector<Detection> read_detections(std::istream& is);
void write_annotations(const std::filesystem::path& path, std::span<const GtAnnotation> annotations);
void write_detections(const std::filesystem::path& path, std::span<const Detection> detections);
std::vector<GtAnnotation> read_annotations(const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// One FMAP per weight tensor plus manifest.json in `dir`.
void save_mlp(const std::filesystem::path& dir, const MlpParams& mlp);
MlpParams load_mlp(const std::filesystem::path& dir);

void save_detector(const std::filesystem::path& dir, const DetectorModel<float>& model);
DetectorModel<float> load_detector(const std::filesystem::path& dir);

nlohmann::json detector_config_to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);
nlohmann::json ssl_config_to_json(const SslConfig& c);
SslConfig ssl_config_from_json(const nlohmann::json& j);

}  // namespace cityradar
