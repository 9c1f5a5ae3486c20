#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cityradar/citymodel.hpp"
#include "cityradar/detect.hpp"
#include "cityradar/eval.hpp"
#include "cityradar/nn.hpp"
#include "cityradar/postproc.hpp"
#include "cityradar/ra_map.hpp"
#include "cityradar/radar_sim.hpp"
#include "cityradar/waveform.hpp"

namespace cityradar {

/// Independent per-stage seed: FNV-1a of the stage name mixed into `seed`.
std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage);

/// Lane footprint class each object class lives on.
std::string_view lane_class_for(ObjectClass c);

struct ClassSpawn {
  int max_count = 2;       // per frame, drawn uniformly from [0, max_count]
  double amplitude = 1.0;  // mean scatter amplitude
  double min_speed = 0.0;  // m/s, radial
  double max_speed = 1.0;
  double height = 1.0;     // m, for the camera proxy
  double width = 1.0;      // m, for the camera proxy
};

enum class SdmAlignment { ra, resize };

struct ExperimentConfig {
  WaveformConfig waveform;
  int range_bins = 128;
  int azimuth_bins = 64;
  double min_range = 3.0;
  double max_range = 17.0;
  std::filesystem::path city_model = "data/street.gml";
  std::vector<SensorPose> poses;
  CameraIntrinsics camera;
  int n_frames = 500;
  double train_fraction = 0.8;
  std::array<ClassSpawn, kNumClasses> classes;
  double on_lane_fraction = 0.9;
  double amplitude_jitter = 0.15;
  std::optional<double> snr_db = 20.0;
  double ghost_probability = 0.5;
  double ghost_attenuation = 0.35;
  std::string reflector_class = "building";
  double min_separation = 1.5;  // m between objects in one frame
  int proxy_side = 32;
  SdmAlignment sdm_alignment = SdmAlignment::ra;
  SslConfig ssl;
  DetectorConfig detect;
  NmsOptions nms;
  std::vector<double> sweep_values;
  std::vector<std::uint64_t> seeds{1, 2, 3};

  ExperimentConfig();
  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing fields keep their defaults; relative paths resolve against `base_dir`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct DatasetFrame {
  std::string id;
  int pose = 0;
  bool train = true;
  RAMap ra;  // normalised
  std::vector<GtAnnotation> annotations;
  std::vector<PointTarget> targets;  // simulated scatterers, ghosts included
  std::vector<TargetOrigin> origins;
  Eigen::MatrixXd proxy;  // camera-view stand-in for the image branch
};

struct Dataset {
  std::vector<DatasetFrame> frames;
  std::vector<std::shared_ptr<const Sdm>> camera_sdms;  // per pose
  std::vector<std::shared_ptr<const Sdm>> sdms;         // per pose, as fed to the detector
  Eigen::VectorXd range_axis;
  Eigen::VectorXd azimuth_axis;
};

/// Samples targets (on class lanes with probability on_lane_fraction,
/// snapped to RA bin centres), simulates cubes and RA maps, and raycasts one
/// SDM per pose. When `out_dir` is set every artefact is written there.
Dataset gen_dataset(const ExperimentConfig& cfg, const CityModel& city, std::uint64_t seed,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Reads a directory written by gen_dataset (cubes are not loaded).
Dataset load_dataset(const std::filesystem::path& dir);
ExperimentConfig dataset_config(const std::filesystem::path& dir);

/// Camera-view intensity proxy: one blob per direct target.
Eigen::MatrixXd render_proxy(std::span<const GtAnnotation> annotations, const SensorPose& pose,
                             const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  EvalReport with_sdm;
  EvalReport without_sdm;
  double initial_loss_with = 0.0, final_loss_with = 0.0;
  double initial_loss_without = 0.0, final_loss_without = 0.0;
  PairSimilarity pretext;
  SweepResult sweep;  // with-SDM model
  double seconds = 0.0;
};

struct PipelineReport {
  std::vector<SeedOutcome> seeds;
  double median_map_with = 0.0;
  double median_map_without = 0.0;
  double seconds = 0.0;

  std::string to_json() const;
  std::string summary() const;
};

using Logger = std::function<void(const std::string&)>;

/// Pretext training, paired downstream training with and without SDM,
/// inference, L-NMS and evaluation for every configured seed.
PipelineReport run_pipeline(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                            const Logger& log = {});

}  // namespace cityradar
