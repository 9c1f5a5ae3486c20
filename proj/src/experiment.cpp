#include "cityradar/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "cityradar/errors.hpp"
#include "cityradar/image.hpp"
#include "cityradar/io.hpp"

namespace cityradar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string frame_name(int k) {
  std::ostringstream os;
  os << "frame_" << std::setw(5) << std::setfill('0') << k;
  return os.str();
}

}  // namespace

std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stage) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(seed ^ splitmix64(h));
}

std::string_view lane_class_for(ObjectClass c) {
  switch (c) {
    case ObjectClass::pedestrian: return "sidewalk";
    case ObjectClass::cyclist: return "bicycle_lane";
    case ObjectClass::car: return "driving_lane";
  }
  throw InvalidArgument("unknown object class");
}

ExperimentConfig::ExperimentConfig() {
  waveform.n_chirps_per_frame = 16;
  poses = {{Eigen::Vector3d(0.0, -1.5, 1.0), 60.0 * kDeg, 0.1},
           {Eigen::Vector3d(10.0, -1.5, 1.0), 90.0 * kDeg, 0.1},
           {Eigen::Vector3d(20.0, -1.5, 1.0), 120.0 * kDeg, 0.1}};
  classes[index_of(ObjectClass::pedestrian)] = {2, 0.45, 0.5, 1.8, 1.0, 0.6};
  classes[index_of(ObjectClass::cyclist)] = {1, 0.7, 2.0, 7.0, 0.9, 0.8};
  classes[index_of(ObjectClass::car)] = {2, 1.0, 3.0, 14.0, 0.7, 1.9};
  detect.epochs = 30;
  detect.learning_rate = 2e-3;
  ssl.epochs = 15;
  ssl.queue_capacity = 256;
  sweep_values = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
}

void ExperimentConfig::validate() const {
  waveform.validate();
  auto fail = [](const std::string& what) { throw InvalidArgument("experiment config: " + what); };
  if (range_bins <= 1 || range_bins > waveform.samples_per_chirp) fail("range_bins must lie in [2, samples_per_chirp]");
  if (azimuth_bins < waveform.n_virtual()) fail("azimuth_bins must be >= n_virtual");
  if (!(min_range > 0.0) || !(max_range > min_range)) fail("need 0 < min_range < max_range");
  const double top = derive_radar_params(waveform).range_resolution * (range_bins - 1);
  if (max_range > top) fail("max_range exceeds the RA grid (" + std::to_string(top) + " m)");
  if (poses.empty()) fail("at least one pose is required");
  if (n_frames < 0) fail("n_frames must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) fail("train_fraction must lie in (0, 1]");
  if (on_lane_fraction < 0.0 || on_lane_fraction > 1.0) fail("on_lane_fraction must lie in [0, 1]");
  if (amplitude_jitter < 0.0 || amplitude_jitter >= 1.0) fail("amplitude_jitter must lie in [0, 1)");
  if (ghost_probability < 0.0 || ghost_probability > 1.0) fail("ghost_probability must lie in [0, 1]");
  if (min_separation < 0.0) fail("min_separation must be non-negative");
  if (proxy_side <= 0) fail("proxy_side must be positive");
  for (const auto& c : classes) {
    if (c.max_count < 0 || !(c.amplitude > 0.0) || c.max_speed < c.min_speed) fail("invalid class spawn settings");
  }
  for (double v : sweep_values) {
    if (!(v > 0.0 && v < 1.0)) fail("sweep values must lie in (0, 1)");
  }
  if (seeds.empty()) fail("at least one seed is required");
  ssl.validate();
  detect.validate();
}

json to_json(const ExperimentConfig& cfg) {
  json j;
  j["waveform"] = cfg.waveform;
  j["range_bins"] = cfg.range_bins;
  j["azimuth_bins"] = cfg.azimuth_bins;
  j["min_range_m"] = cfg.min_range;
  j["max_range_m"] = cfg.max_range;
  j["city_model"] = cfg.city_model.string();
  j["poses"] = json::array();
  for (const auto& p : cfg.poses) {
    j["poses"].push_back({{"position", {p.position.x(), p.position.y(), p.position.z()}},
                          {"heading_deg", p.heading / kDeg},
                          {"mount_offset_m", p.mount_offset}});
  }
  j["camera"] = {{"width", cfg.camera.width},
                 {"height", cfg.camera.height},
                 {"hfov_deg", cfg.camera.horizontal_fov},
                 {"vfov_deg", cfg.camera.vertical_fov}};
  j["n_frames"] = cfg.n_frames;
  j["train_fraction"] = cfg.train_fraction;
  for (ObjectClass c : kObjectClasses) {
    const auto& s = cfg.classes[index_of(c)];
    j["classes"][std::string(to_string(c))] = {{"max_count", s.max_count}, {"amplitude", s.amplitude},
                                               {"min_speed", s.min_speed}, {"max_speed", s.max_speed},
                                               {"height", s.height},       {"width", s.width}};
  }
  j["on_lane_fraction"] = cfg.on_lane_fraction;
  j["amplitude_jitter"] = cfg.amplitude_jitter;
  j["snr_db"] = cfg.snr_db ? json(*cfg.snr_db) : json(nullptr);
  j["ghost_probability"] = cfg.ghost_probability;
  j["ghost_attenuation"] = cfg.ghost_attenuation;
  j["reflector_class"] = cfg.reflector_class;
  j["min_separation_m"] = cfg.min_separation;
  j["proxy_side"] = cfg.proxy_side;
  j["sdm_alignment"] = cfg.sdm_alignment == SdmAlignment::ra ? "ra" : "resize";
  j["ssl"] = ssl_config_to_json(cfg.ssl);
  j["detect"] = detector_config_to_json(cfg.detect);
  j["nms"] = {{"peak_threshold", cfg.nms.peak_threshold}, {"ols_threshold", cfg.nms.ols_threshold}};
  j["sweep_values"] = cfg.sweep_values;
  j["seeds"] = cfg.seeds;
  return j;
}

ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir) {
  ExperimentConfig cfg;
  try {
    if (j.contains("waveform")) cfg.waveform = j.at("waveform").get<WaveformConfig>();
    cfg.range_bins = j.value("range_bins", cfg.range_bins);
    cfg.azimuth_bins = j.value("azimuth_bins", cfg.azimuth_bins);
    cfg.min_range = j.value("min_range_m", cfg.min_range);
    cfg.max_range = j.value("max_range_m", cfg.max_range);
    if (j.contains("city_model")) {
      fs::path p = j.at("city_model").get<std::string>();
      cfg.city_model = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    if (j.contains("poses")) {
      cfg.poses.clear();
      for (const auto& p : j.at("poses")) {
        const auto pos = p.at("position").get<std::array<double, 3>>();
        cfg.poses.push_back({Eigen::Vector3d(pos[0], pos[1], pos[2]), p.at("heading_deg").get<double>() * kDeg,
                             p.value("mount_offset_m", 0.1)});
      }
    }
    if (j.contains("camera")) {
      const auto& c = j.at("camera");
      cfg.camera.width = c.value("width", cfg.camera.width);
      cfg.camera.height = c.value("height", cfg.camera.height);
      cfg.camera.horizontal_fov = c.value("hfov_deg", cfg.camera.horizontal_fov);
      cfg.camera.vertical_fov = c.value("vfov_deg", cfg.camera.vertical_fov);
    }
    cfg.n_frames = j.value("n_frames", cfg.n_frames);
    cfg.train_fraction = j.value("train_fraction", cfg.train_fraction);
    if (j.contains("classes")) {
      for (auto it = j.at("classes").begin(); it != j.at("classes").end(); ++it) {
        auto& s = cfg.classes[index_of(object_class_from_string(it.key()))];
        const auto& v = it.value();
        s.max_count = v.value("max_count", s.max_count);
        s.amplitude = v.value("amplitude", s.amplitude);
        s.min_speed = v.value("min_speed", s.min_speed);
        s.max_speed = v.value("max_speed", s.max_speed);
        s.height = v.value("height", s.height);
        s.width = v.value("width", s.width);
      }
    }
    cfg.on_lane_fraction = j.value("on_lane_fraction", cfg.on_lane_fraction);
    cfg.amplitude_jitter = j.value("amplitude_jitter", cfg.amplitude_jitter);
    if (j.contains("snr_db")) {
      if (j.at("snr_db").is_null()) cfg.snr_db.reset();
      else cfg.snr_db = j.at("snr_db").get<double>();
    }
    cfg.ghost_probability = j.value("ghost_probability", cfg.ghost_probability);
    cfg.ghost_attenuation = j.value("ghost_attenuation", cfg.ghost_attenuation);
    cfg.reflector_class = j.value("reflector_class", cfg.reflector_class);
    cfg.min_separation = j.value("min_separation_m", cfg.min_separation);
    cfg.proxy_side = j.value("proxy_side", cfg.proxy_side);
    if (j.contains("sdm_alignment")) {
      const auto a = j.at("sdm_alignment").get<std::string>();
      if (a == "ra") cfg.sdm_alignment = SdmAlignment::ra;
      else if (a == "resize") cfg.sdm_alignment = SdmAlignment::resize;
      else throw ParseError("unknown sdm_alignment '" + a + "'");
    }
    if (j.contains("ssl")) cfg.ssl = ssl_config_from_json(j.at("ssl"));
    if (j.contains("detect")) cfg.detect = detector_config_from_json(j.at("detect"));
    if (j.contains("nms")) {
      cfg.nms.peak_threshold = j.at("nms").value("peak_threshold", cfg.nms.peak_threshold);
      cfg.nms.ols_threshold = j.at("nms").value("ols_threshold", cfg.nms.ols_threshold);
    }
    if (j.contains("sweep_values")) cfg.sweep_values = j.at("sweep_values").get<std::vector<double>>();
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

Eigen::MatrixXd render_proxy(std::span<const GtAnnotation> annotations, const SensorPose& pose,
                             const ExperimentConfig& cfg, std::uint64_t seed) {
  CameraIntrinsics cam = cfg.camera;
  cam.width = cam.height = cfg.proxy_side;
  const double focal = 0.5 * cam.width / std::tan(0.5 * cam.horizontal_fov * kDeg);
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(cam.height, cam.width);
  for (const auto& a : annotations) {
    const ClassSpawn& s = cfg.classes[index_of(a.class_label)];
    Eigen::Vector3d p = polar_to_world(a.range, a.azimuth, pose);
    p.z() = 0.5 * s.height;
    const auto px = project_to_pixel(p, pose, cam);
    if (!px) continue;
    const double depth = (p - pose.position).norm();
    const double sx = std::max(0.5, 0.5 * s.width * focal / depth);
    const double sy = std::max(0.5, 0.5 * s.height * focal / depth);
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        const double du = (u + 0.5 - px->x()) / sx, dv = (v + 0.5 - px->y()) / sy;
        img(v, u) += std::exp(-0.5 * (du * du + dv * dv));
      }
    }
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (Eigen::Index k = 0; k < img.size(); ++k) img.data()[k] = std::clamp(img.data()[k] + noise(rng), 0.0, 1.0);
  return img;
}

namespace {

std::optional<ReflectorLine> reflector_for(const CityModel& city, const std::string& cls, const SensorPose& pose) {
  for (const auto& o : city.objects) {
    if (o.class_label != cls) continue;
    for (const Triangle& t : o.mesh) {
      const Eigen::Vector3d n = (t[1] - t[0]).cross(t[2] - t[0]);
      if (std::abs(n.normalized().z()) > 0.5) continue;  // horizontal faces do not mirror in azimuth
      const Eigen::Rotation2Dd to_sensor(-pose.heading);
      ReflectorLine line;
      line.point = to_sensor * (t[0] - pose.position).head<2>();
      line.normal = (to_sensor * n.head<2>()).normalized();
      return line;
    }
  }
  return std::nullopt;
}

// Candidate RA bins for target placement around one pose.
struct PlacementGrid {
  std::array<std::vector<int>, kNumClasses> on_lane, off_lane;  // flat bin index i * A + j
  std::array<std::vector<double>, kNumClasses> on_weight, off_weight;
};

PlacementGrid placement_grid(const ExperimentConfig& cfg, const CityModel& city, const SensorPose& pose,
                             const Eigen::VectorXd& ra, const Eigen::VectorXd& az) {
  const auto lanes = project_lanes_to_ra(city, pose, ra, az);
  PlacementGrid g;
  const auto A = az.size();
  for (Eigen::Index i = 0; i < ra.size(); ++i) {
    if (ra[i] < cfg.min_range || ra[i] > cfg.max_range) continue;
    for (Eigen::Index j = 1; j + 1 < A; ++j) {
      if (std::abs(az[j]) > kFieldOfView) continue;
      // Bin footprint area grows with range and with the local azimuth spacing.
      const double w = ra[i] * 0.5 * (az[j + 1] - az[j - 1]);
      for (ObjectClass c : kObjectClasses) {
        const auto lane = std::find(kLaneClasses.begin(), kLaneClasses.end(), lane_class_for(c)) - kLaneClasses.begin();
        const bool on = lanes[lane](i, j) > 0.5;
        auto& bins = on ? g.on_lane[index_of(c)] : g.off_lane[index_of(c)];
        auto& weights = on ? g.on_weight[index_of(c)] : g.off_weight[index_of(c)];
        bins.push_back(static_cast<int>(i * A + j));
        weights.push_back(w);
      }
    }
  }
  return g;
}

}  // namespace

Dataset gen_dataset(const ExperimentConfig& cfg, const CityModel& city, std::uint64_t seed,
                    const std::optional<fs::path>& out_dir) {
  cfg.validate();
  city.validate();
  Dataset ds;
  const RadarParams params = derive_radar_params(cfg.waveform);
  {
    // Axes come from the RA pipeline itself so they always agree with the maps.
    const RAMap probe = cube_to_ra_map(RadarCube(cfg.waveform), cfg.range_bins, cfg.azimuth_bins);
    ds.range_axis = probe.range_axis;
    ds.azimuth_axis = probe.azimuth_axis;
  }
  const auto A = ds.azimuth_axis.size();

  std::vector<PlacementGrid> grids;
  std::vector<std::optional<ReflectorLine>> reflectors;
  for (const auto& pose : cfg.poses) {
    auto cam_sdm = std::make_shared<Sdm>(raycast_sdm(city, pose, cfg.camera));
    ds.camera_sdms.push_back(cam_sdm);
    if (cfg.sdm_alignment == SdmAlignment::ra) {
      ds.sdms.push_back(
          std::make_shared<Sdm>(warp_sdm_to_ra(*cam_sdm, pose, cfg.camera, ds.range_axis, ds.azimuth_axis)));
    } else {
      ds.sdms.push_back(cam_sdm);
    }
    grids.push_back(placement_grid(cfg, city, pose, ds.range_axis, ds.azimuth_axis));
    reflectors.push_back(reflector_for(city, cfg.reflector_class, pose));
  }
  // Fail before any sampling when a required placement area does not exist.
  for (std::size_t p = 0; p < grids.size(); ++p) {
    for (ObjectClass c : kObjectClasses) {
      if (cfg.classes[index_of(c)].max_count == 0) continue;
      const bool need_on = cfg.on_lane_fraction > 0.0, need_off = cfg.on_lane_fraction < 1.0;
      if ((need_on && grids[p].on_lane[index_of(c)].empty()) || (need_off && grids[p].off_lane[index_of(c)].empty())) {
        throw InvalidArgument("gen_dataset: pose " + std::to_string(p) + " sees no " +
                              (need_on && grids[p].on_lane[index_of(c)].empty() ? "" : "off-") +
                              std::string(lane_class_for(c)) + " area for class " + std::string(to_string(c)));
      }
    }
  }

  std::mt19937_64 rng(stage_seed(seed, "gen_dataset"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n_train = static_cast<int>(std::lround(cfg.train_fraction * cfg.n_frames));

  if (out_dir) {
    fs::create_directories(*out_dir / "cubes");
    fs::create_directories(*out_dir / "ramaps");
    fs::create_directories(*out_dir / "sdm");
    fs::create_directories(*out_dir / "proxies");
  }
  json manifest;
  manifest["seed"] = seed;
  manifest["n_frames"] = cfg.n_frames;
  manifest["frames"] = json::array();
  std::vector<GtAnnotation> all_annotations;

  for (int k = 0; k < cfg.n_frames; ++k) {
    DatasetFrame f;
    f.id = frame_name(k);
    f.pose = k % static_cast<int>(cfg.poses.size());
    f.train = k < n_train;
    const SensorPose& pose = cfg.poses[f.pose];
    const PlacementGrid& grid = grids[f.pose];

    std::array<int, kNumClasses> counts{};
    int total = 0;
    for (ObjectClass c : kObjectClasses) {
      counts[index_of(c)] = std::uniform_int_distribution<int>(0, cfg.classes[index_of(c)].max_count)(rng);
      total += counts[index_of(c)];
    }
    if (total == 0) counts[std::uniform_int_distribution<int>(0, kNumClasses - 1)(rng)] = 1;

    std::vector<Eigen::Vector3d> placed;
    for (ObjectClass c : kObjectClasses) {
      const ClassSpawn& spawn = cfg.classes[index_of(c)];
      for (int n = 0; n < counts[index_of(c)]; ++n) {
        const bool on_lane = unit(rng) < cfg.on_lane_fraction;
        const auto& bins = on_lane ? grid.on_lane[index_of(c)] : grid.off_lane[index_of(c)];
        const auto& weights = on_lane ? grid.on_weight[index_of(c)] : grid.off_weight[index_of(c)];
        if (bins.empty()) {
          throw InvalidArgument("gen_dataset: no " + std::string(on_lane ? "" : "off-") + std::string(lane_class_for(c)) +
                                " area visible from pose " + std::to_string(f.pose) + " for class " +
                                std::string(to_string(c)));
        }
        std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
        for (int attempt = 0; attempt < 100; ++attempt) {
          const int b = bins[pick(rng)];
          const double range = ds.range_axis[b / A], azimuth = ds.azimuth_axis[b % A];
          const Eigen::Vector3d world = polar_to_world(range, azimuth, pose);
          const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Eigen::Vector3d& q) {
            return (q - world).head<2>().norm() < cfg.min_separation;
          });
          if (!clear) continue;
          placed.push_back(world);
          f.annotations.push_back({f.id, c, range, azimuth});
          const double amp = spawn.amplitude * (1.0 + cfg.amplitude_jitter * (2.0 * unit(rng) - 1.0));
          const double speed = spawn.min_speed + (spawn.max_speed - spawn.min_speed) * unit(rng);
          f.targets.push_back({range, azimuth, unit(rng) < 0.5 ? -speed : speed, amp, c});
          break;
        }
      }
    }
    validate_targets(f.targets, params.unambiguous_range);

    f.origins.assign(f.targets.size(), TargetOrigin::direct);
    if (reflectors[f.pose] && unit(rng) < cfg.ghost_probability) {
      GhostOptions opt;
      opt.attenuation = cfg.ghost_attenuation;
      opt.max_range = ds.range_axis[ds.range_axis.size() - 1];
      GhostedScene scene = inject_ghost(f.targets, *reflectors[f.pose], opt);
      f.targets = std::move(scene.targets);
      f.origins = std::move(scene.origins);
    }

    const std::uint64_t frame_seed = rng();
    const RadarCube cube = simulate_frame(f.targets, cfg.waveform, cfg.snr_db, frame_seed);
    f.ra = cube_to_ra_map(cube, cfg.range_bins, cfg.azimuth_bins);
    f.ra.frame_id = f.id;
    f.ra.normalize();
    f.proxy = render_proxy(f.annotations, pose, cfg, splitmix64(frame_seed));

    if (out_dir) {
      write_rdc1(*out_dir / "cubes" / (f.id + ".rdc"), cube);
      write_ramap(*out_dir / "ramaps" / (f.id + ".fmap"), f.ra);
      write_fmap(*out_dir / "proxies" / (f.id + ".fmap"), MapStack{f.proxy});
      manifest["frames"].push_back({{"id", f.id},
                                    {"pose", f.pose},
                                    {"split", f.train ? "train" : "test"},
                                    {"cube", "cubes/" + f.id + ".rdc"},
                                    {"ramap", "ramaps/" + f.id + ".fmap"},
                                    {"proxy", "proxies/" + f.id + ".fmap"},
                                    {"n_ghosts", std::count(f.origins.begin(), f.origins.end(), TargetOrigin::ghost)}});
    }
    all_annotations.insert(all_annotations.end(), f.annotations.begin(), f.annotations.end());
    ds.frames.push_back(std::move(f));
  }

  if (out_dir) {
    manifest["sdm"] = json::array();
    for (std::size_t p = 0; p < cfg.poses.size(); ++p) {
      const std::string stem = "sdm/pose_" + std::to_string(p);
      write_sdm(*out_dir / (stem + "_camera.fmap"), *ds.camera_sdms[p]);
      write_sdm(*out_dir / (stem + ".fmap"), *ds.sdms[p]);
      manifest["sdm"].push_back({{"pose", p}, {"camera", stem + "_camera.fmap"}, {"detector", stem + ".fmap"}});
    }
    write_annotations(*out_dir / "annotations.jsonl", all_annotations);
    manifest["annotations"] = "annotations.jsonl";
    manifest["config"] = to_json(cfg);
    write_text(*out_dir / "manifest.json", manifest.dump(2) + "\n");
  }
  return ds;
}

ExperimentConfig dataset_config(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
    return experiment_config_from_json(manifest.at("config"));
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  Dataset ds;
  try {
    const json manifest = json::parse(read_text(manifest_path));
    for (const auto& s : manifest.at("sdm")) {
      ds.camera_sdms.push_back(std::make_shared<Sdm>(read_sdm(dir / s.at("camera").get<std::string>())));
      ds.sdms.push_back(std::make_shared<Sdm>(read_sdm(dir / s.at("detector").get<std::string>())));
    }
    std::map<std::string, std::vector<GtAnnotation>> by_frame;
    for (auto& a : read_annotations(dir / manifest.at("annotations").get<std::string>())) {
      by_frame[a.frame].push_back(std::move(a));
    }
    for (const auto& fr : manifest.at("frames")) {
      DatasetFrame f;
      f.id = fr.at("id").get<std::string>();
      f.pose = fr.at("pose").get<int>();
      f.train = fr.at("split").get<std::string>() == "train";
      if (f.pose < 0 || f.pose >= static_cast<int>(ds.sdms.size())) throw ParseError("frame " + f.id + ": bad pose");
      f.ra = read_ramap(dir / fr.at("ramap").get<std::string>());
      const MapStack proxy = read_fmap(dir / fr.at("proxy").get<std::string>());
      if (proxy.size() != 1) throw ParseError("frame " + f.id + ": proxy must have one channel");
      f.proxy = proxy[0];
      f.annotations = by_frame[f.id];
      ds.frames.push_back(std::move(f));
    }
    if (manifest.at("n_frames").get<std::size_t>() != ds.frames.size()) {
      throw ParseError("frame count does not match n_frames");
    }
  } catch (const json::exception& e) {
    throw ParseError(manifest_path.string() + ": " + e.what());
  }
  if (!ds.frames.empty()) {
    ds.range_axis = ds.frames[0].ra.range_axis;
    ds.azimuth_axis = ds.frames[0].ra.azimuth_axis;
  }
  return ds;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Eigen::MatrixXd max_over_classes(const ConfMaps& m) {
  Eigen::MatrixXd out = m.channels[0];
  for (std::size_t c = 1; c < m.channels.size(); ++c) out = out.cwiseMax(m.channels[c]);
  return out;
}

}  // namespace

std::string PipelineReport::to_json() const {
  nlohmann::ordered_json j;
  j["median_map_with_sdm"] = median_map_with;
  j["median_map_without_sdm"] = median_map_without;
  j["median_map_gain"] = median_map_with - median_map_without;
  j["seconds"] = seconds;
  j["seeds"] = nlohmann::ordered_json::array();
  for (const auto& s : seeds) {
    nlohmann::ordered_json e;
    e["seed"] = s.seed;
    e["map_with_sdm"] = s.with_sdm.map;
    e["mar_with_sdm"] = s.with_sdm.mar;
    e["map_without_sdm"] = s.without_sdm.map;
    e["mar_without_sdm"] = s.without_sdm.mar;
    e["map_gain"] = s.with_sdm.map - s.without_sdm.map;
    e["loss_with_sdm"] = {{"initial", s.initial_loss_with}, {"final", s.final_loss_with}};
    e["loss_without_sdm"] = {{"initial", s.initial_loss_without}, {"final", s.final_loss_without}};
    e["pretext_similarity"] = {{"positive", s.pretext.positive_mean}, {"mismatched", s.pretext.mismatched_mean}};
    e["seconds"] = s.seconds;
    j["seeds"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string PipelineReport::summary() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "seed      mAP(SDM)  mAP(no SDM)  gain     mAR(SDM)  mAR(no SDM)\n";
  for (const auto& s : seeds) {
    os << std::setw(8) << std::left << s.seed << "  " << s.with_sdm.map << "    " << s.without_sdm.map << "       "
       << std::showpos << s.with_sdm.map - s.without_sdm.map << std::noshowpos << "  " << s.with_sdm.mar << "    "
       << s.without_sdm.mar << "\n";
  }
  os << "median    " << median_map_with << "    " << median_map_without << "       " << std::showpos
     << median_map_with - median_map_without << std::noshowpos << "\n";
  os << "total " << std::setprecision(1) << seconds << " s\n";
  return os.str();
}

PipelineReport run_pipeline(const ExperimentConfig& cfg, const std::optional<fs::path>& out_dir, const Logger& log) {
  using Clock = std::chrono::steady_clock;
  auto note = [&](const std::string& msg) {
    if (log) log(msg);
  };
  auto stage = [&](const std::string& name, auto&& fn) {
    try {
      return fn();
    } catch (const NumericError& e) {
      throw NumericError(name + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(name + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(name + ": " + e.what());
    }
  };

  cfg.validate();
  const auto t_start = Clock::now();
  const CityModel city = stage("load city model", [&] { return load_city_model(cfg.city_model); });
  PipelineReport report;

  for (std::uint64_t seed : cfg.seeds) {
    const auto t_seed = Clock::now();
    SeedOutcome out;
    out.seed = seed;
    const std::optional<fs::path> seed_dir =
        out_dir ? std::optional<fs::path>(*out_dir / ("seed_" + std::to_string(seed))) : std::nullopt;
    if (seed_dir) fs::create_directories(*seed_dir);

    const Dataset ds = stage("gen_dataset", [&] { return gen_dataset(cfg, city, seed); });
    std::vector<PretextPair> train_pairs, test_pairs;
    std::vector<DetectionFrame> train_frames;
    std::vector<const DatasetFrame*> test_frames;
    std::vector<GtAnnotation> test_gt;
    for (const auto& f : ds.frames) {
      (f.train ? train_pairs : test_pairs).push_back({f.ra.grid, f.proxy});
      if (f.train) {
        train_frames.push_back({f.ra, ds.sdms[f.pose], f.annotations});
      } else {
        test_frames.push_back(&f);
        test_gt.insert(test_gt.end(), f.annotations.begin(), f.annotations.end());
      }
    }
    note("seed " + std::to_string(seed) + ": " + std::to_string(train_frames.size()) + " train / " +
         std::to_string(test_frames.size()) + " test frames");

    SslConfig ssl = cfg.ssl;
    ssl.seed = stage_seed(seed, "pretext");
    const PretextResult pretext = stage("pretext_train", [&] { return pretext_train(train_pairs, ssl); });
    out.pretext = test_pairs.empty() ? PairSimilarity{}
                                     : pair_similarity(pretext, test_pairs, ssl.input_side);
    note("  pretext loss " + std::to_string(pretext.history.front()) + " -> " + std::to_string(pretext.history.back()));

    DetectorConfig dc = cfg.detect;
    dc.seed = stage_seed(seed, "detect");
    dc.encoder_side = ssl.input_side;
    dc.use_sdm = true;
    const auto with = stage("detect_train (SDM)", [&] { return detect_train<float>(train_frames, pretext.radar_encoder, dc); });
    dc.use_sdm = false;
    const auto without =
        stage("detect_train (no SDM)", [&] { return detect_train<float>(train_frames, pretext.radar_encoder, dc); });
    out.initial_loss_with = with.initial_loss;
    out.final_loss_with = with.final_loss;
    out.initial_loss_without = without.initial_loss;
    out.final_loss_without = without.final_loss;
    note("  detector loss (SDM) " + std::to_string(with.initial_loss) + " -> " + std::to_string(with.final_loss) +
         ", (no SDM) " + std::to_string(without.initial_loss) + " -> " + std::to_string(without.final_loss));

    std::vector<Detection> dets_with, dets_without;
    std::vector<FrameConfMaps> maps_with;
    Eigen::MatrixXd diff_sum = Eigen::MatrixXd::Zero(ds.range_axis.size(), ds.azimuth_axis.size());
    stage("inference", [&] {
      for (const DatasetFrame* f : test_frames) {
        ConfMaps cw = infer_confmaps(with.model, f->ra, ds.sdms[f->pose].get());
        ConfMaps cn = infer_confmaps(without.model, f->ra, nullptr);
        auto dw = l_nms(cw, ds.range_axis, ds.azimuth_axis, cfg.detect.kappa, cfg.nms, f->id);
        auto dn = l_nms(cn, ds.range_axis, ds.azimuth_axis, cfg.detect.kappa, cfg.nms, f->id);
        dets_with.insert(dets_with.end(), dw.begin(), dw.end());
        dets_without.insert(dets_without.end(), dn.begin(), dn.end());
        const Eigen::MatrixXd diff = max_over_classes(cw) - max_over_classes(cn);
        diff_sum += diff;
        if (seed_dir && maps_with.size() < 3) {
          write_ppm(*seed_dir / ("diff_" + f->id + ".ppm"), diverging_image(diff, 1.0));
        }
        maps_with.push_back({f->id, std::move(cw)});
      }
      return 0;
    });
    out.with_sdm = evaluate(dets_with, test_gt, cfg.detect.kappa);
    out.without_sdm = evaluate(dets_without, test_gt, cfg.detect.kappa);
    if (!cfg.sweep_values.empty()) {
      out.sweep = ols_sweep(maps_with, test_gt, cfg.sweep_values, cfg.detect.kappa, ds.range_axis, ds.azimuth_axis,
                            cfg.nms.peak_threshold);
    }
    out.seconds = std::chrono::duration<double>(Clock::now() - t_seed).count();
    note("  mAP with SDM " + std::to_string(out.with_sdm.map) + ", without " + std::to_string(out.without_sdm.map) +
         " (" + std::to_string(out.seconds) + " s)");

    if (seed_dir) {
      write_text(*seed_dir / "report_with_sdm.json", out.with_sdm.to_json());
      write_text(*seed_dir / "report_with_sdm.csv", out.with_sdm.to_csv());
      write_text(*seed_dir / "report_without_sdm.json", out.without_sdm.to_json());
      write_text(*seed_dir / "report_without_sdm.csv", out.without_sdm.to_csv());
      write_detections(*seed_dir / "detections_with_sdm.jsonl", dets_with);
      write_detections(*seed_dir / "detections_without_sdm.jsonl", dets_without);
      write_annotations(*seed_dir / "test_annotations.jsonl", test_gt);
      if (!test_frames.empty()) {
        const Eigen::MatrixXd mean_diff = diff_sum / static_cast<double>(test_frames.size());
        write_ppm(*seed_dir / "diff_mean.ppm", diverging_image(mean_diff, std::max(1e-6, mean_diff.cwiseAbs().maxCoeff())));
      }
      if (!out.sweep.rows.empty()) {
        write_text(*seed_dir / "sweep.csv", out.sweep.to_csv());
        write_ppm(*seed_dir / "sweep.ppm", out.sweep.plot());
      }
      save_mlp(*seed_dir / "model" / "radar_encoder", pretext.radar_encoder);
      save_detector(*seed_dir / "model" / "detector_sdm", with.model);
      save_detector(*seed_dir / "model" / "detector_no_sdm", without.model);
    }
    report.seeds.push_back(std::move(out));
  }

  std::vector<double> mw, mn;
  for (const auto& s : report.seeds) {
    mw.push_back(s.with_sdm.map);
    mn.push_back(s.without_sdm.map);
  }
  report.median_map_with = median(mw);
  report.median_map_without = median(mn);
  report.seconds = std::chrono::duration<double>(Clock::now() - t_start).count();
  if (out_dir) {
    write_text(*out_dir / "pipeline_report.json", report.to_json());
    write_text(*out_dir / "summary.txt", report.summary());
  }
  return report;
}

}  // namespace cityradar
