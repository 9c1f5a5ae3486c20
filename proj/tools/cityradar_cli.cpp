#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "cityradar/errors.hpp"
#include "cityradar/eval.hpp"
#include "cityradar/experiment.hpp"
#include "cityradar/image.hpp"
#include "cityradar/io.hpp"

namespace fs = std::filesystem;
using namespace cityradar;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct Options {
  fs::path config;
  std::optional<std::uint64_t> seed;
  fs::path out;
  fs::path in;
  fs::path data;
  fs::path model;
  fs::path encoder;
  fs::path annotations;
  fs::path city;
  bool use_sdm = false;
  std::optional<double> ols;
  std::optional<double> peak;
  std::string format;
  int pose = 0;
  std::vector<double> ols_values;
};

ExperimentConfig experiment_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.seed) cfg.seeds = {*o.seed};
  if (o.ols) cfg.nms.ols_threshold = *o.ols;
  if (o.peak) cfg.nms.peak_threshold = *o.peak;
  cfg.validate();
  return cfg;
}

void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw CLI::RequiredError(flag);
}

void cmd_params(const Options& o) {
  WaveformConfig cfg;
  if (!o.config.empty()) {
    try {
      cfg = nlohmann::json::parse(read_text(o.config)).get<WaveformConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(o.config.string() + ": " + e.what());
    }
  }
  const RadarParams p = derive_radar_params(cfg);
  if (o.format == "csv") {
    std::cout << "range_resolution_m,unambiguous_range_m,n_virtual,angular_resolution_deg,wavelength_m,"
                 "velocity_resolution_mps\n"
              << p.range_resolution << ',' << p.unambiguous_range << ',' << p.n_virtual << ','
              << p.angular_resolution << ',' << p.wavelength << ',' << p.velocity_resolution << "\n";
  } else {
    std::cout << nlohmann::json(p).dump(2) << "\n";
  }
}

void cmd_gen(const Options& o) {
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  const CityModel city = load_city_model(o.city.empty() ? cfg.city_model : o.city);
  const Dataset ds = gen_dataset(cfg, city, cfg.seeds.front(), o.out);
  std::cerr << "wrote " << ds.frames.size() << " frames to " << o.out << "\n";
}

void cmd_ramap(const Options& o) {
  require(o.in, "--in");
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  const RadarCube cube = read_rdc1(o.in, cfg.waveform);
  RAMap map = cube_to_ra_map(cube, cfg.range_bins, cfg.azimuth_bins);
  map.frame_id = o.in.stem().string();
  map.normalize();
  if (o.format == "pgm") write_pgm(o.out, map.grid);
  else write_ramap(o.out, map);
}

void cmd_sdm(const Options& o) {
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  if (o.pose < 0 || o.pose >= static_cast<int>(cfg.poses.size())) throw InvalidArgument("--pose out of range");
  const CityModel city = load_city_model(o.city.empty() ? cfg.city_model : o.city);
  const Sdm sdm = raycast_sdm(city, cfg.poses[o.pose], cfg.camera);
  if (o.format == "pgm") {
    write_pgm(o.out, sdm.depth, 0.0, sdm.max_range);
  } else {
    write_sdm(o.out, sdm);
  }
}

std::vector<PretextPair> pairs_of(const Dataset& ds, bool train) {
  std::vector<PretextPair> pairs;
  for (const auto& f : ds.frames) {
    if (f.train == train) pairs.push_back({f.ra.grid, f.proxy});
  }
  return pairs;
}

void cmd_pretrain(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  ExperimentConfig cfg = o.config.empty() ? dataset_config(o.data) : experiment_config(o);
  const Dataset ds = load_dataset(o.data);
  SslConfig ssl = cfg.ssl;
  ssl.seed = stage_seed(o.seed.value_or(cfg.seeds.front()), "pretext");
  const PretextResult r = pretext_train(pairs_of(ds, true), ssl);
  save_mlp(o.out / "radar_encoder", r.radar_encoder);
  save_mlp(o.out / "radar_projection", r.radar_projection);
  save_mlp(o.out / "image_encoder", r.image_encoder);
  save_mlp(o.out / "image_projection", r.image_projection);
  nlohmann::json j;
  j["history"] = r.history;
  const auto test = pairs_of(ds, false);
  if (!test.empty()) {
    const PairSimilarity s = pair_similarity(r, test, ssl.input_side);
    j["held_out"] = {{"positive_mean", s.positive_mean}, {"mismatched_mean", s.mismatched_mean}};
  }
  write_text(o.out / "pretext.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

void cmd_train(const Options& o) {
  require(o.data, "--data");
  require(o.encoder, "--encoder");
  require(o.out, "--out");
  ExperimentConfig cfg = o.config.empty() ? dataset_config(o.data) : experiment_config(o);
  const Dataset ds = load_dataset(o.data);
  std::vector<DetectionFrame> frames;
  for (const auto& f : ds.frames) {
    if (f.train) frames.push_back({f.ra, ds.sdms[f.pose], f.annotations});
  }
  DetectorConfig dc = cfg.detect;
  dc.use_sdm = o.use_sdm;
  dc.encoder_side = cfg.ssl.input_side;
  dc.seed = stage_seed(o.seed.value_or(cfg.seeds.front()), "detect");
  const auto r = detect_train<float>(frames, load_mlp(o.encoder), dc);
  save_detector(o.out, r.model);
  nlohmann::json j{{"initial_loss", r.initial_loss}, {"final_loss", r.final_loss}, {"history", r.history}};
  write_text(o.out / "training.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

void cmd_infer(const Options& o) {
  require(o.data, "--data");
  require(o.model, "--model");
  require(o.out, "--out");
  const Dataset ds = load_dataset(o.data);
  const DetectorModel<float> model = load_detector(o.model);
  fs::create_directories(o.out);
  for (const auto& f : ds.frames) {
    if (f.train) continue;
    const ConfMaps maps = infer_confmaps(model, f.ra, model.config.use_sdm ? ds.sdms[f.pose].get() : nullptr);
    write_confmaps(o.out / (f.id + ".fmap"), maps, f.ra.range_axis, f.ra.azimuth_axis, f.id);
  }
}

std::vector<LoadedConfMaps> read_confmap_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".fmap") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LoadedConfMaps> out;
  for (const auto& f : files) out.push_back(read_confmaps(f));
  return out;
}

void cmd_nms(const Options& o) {
  require(o.in, "--in");
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  std::vector<Detection> dets;
  for (const auto& m : read_confmap_dir(o.in)) {
    auto d = l_nms(m.maps, m.range_axis, m.azimuth_axis, cfg.detect.kappa, cfg.nms, m.frame);
    dets.insert(dets.end(), d.begin(), d.end());
  }
  write_detections(o.out, dets);
  std::cerr << dets.size() << " detections\n";
}

void cmd_eval(const Options& o) {
  require(o.in, "--in");
  require(o.annotations, "--annotations");
  const ExperimentConfig cfg = experiment_config(o);
  const auto dets = read_detections(o.in);
  auto gts = read_annotations(o.annotations);
  // Only frames that have detections or GT in the evaluated set matter; GT of
  // frames absent from the detection file count as misses.
  const EvalReport r = evaluate(dets, gts, cfg.detect.kappa);
  const std::string text = o.format == "csv" ? r.to_csv() : r.to_json();
  if (o.out.empty()) std::cout << text;
  else write_text(o.out, text);
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

void cmd_sweep(const Options& o) {
  require(o.in, "--in");
  require(o.annotations, "--annotations");
  require(o.out, "--out");
  const ExperimentConfig cfg = experiment_config(o);
  std::vector<FrameConfMaps> frames;
  Eigen::VectorXd ra, az;
  for (auto& m : read_confmap_dir(o.in)) {
    ra = m.range_axis;
    az = m.azimuth_axis;
    frames.push_back({m.frame, std::move(m.maps)});
  }
  if (frames.empty()) throw ParseError(o.in.string() + ": no confidence maps");
  const auto gts = read_annotations(o.annotations);
  const auto values = o.ols_values.empty() ? cfg.sweep_values : o.ols_values;
  const SweepResult r = ols_sweep(frames, gts, values, cfg.detect.kappa, ra, az, cfg.nms.peak_threshold);
  fs::create_directories(o.out);
  write_text(o.out / "sweep.csv", r.to_csv());
  write_ppm(o.out / "sweep.ppm", r.plot());
  std::cout << r.to_csv();
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
}

void cmd_render(const Options& o) {
  require(o.in, "--in");
  require(o.out, "--out");
  const MapStack maps = read_fmap(o.in);
  if (maps.empty()) throw ParseError(o.in.string() + ": no channels");
  if (o.format == "ppm") {
    if (maps.size() < 3) throw InvalidArgument("render: PPM composites need at least 3 channels");
    RgbImage img(static_cast<int>(maps[0].cols()), static_cast<int>(maps[0].rows()));
    std::array<std::vector<std::uint8_t>, 3> g;
    for (int c = 0; c < 3; ++c) g[c] = to_gray(maps[c], 0.0, std::max(1e-12, maps[c].maxCoeff()));
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const auto k = static_cast<std::size_t>(y) * img.width + x;
        img.set(x, y, {g[0][k], g[1][k], g[2][k]});
      }
    }
    write_ppm(o.out, img);
  } else {
    // One PGM per channel; a single channel keeps the requested name.
    for (std::size_t c = 0; c < maps.size(); ++c) {
      fs::path p = o.out;
      if (maps.size() > 1) p.replace_filename(o.out.stem().string() + "_" + std::to_string(c) + ".pgm");
      const double hi = maps[c].maxCoeff();
      write_pgm(p, maps[c], std::min(0.0, maps[c].minCoeff()), hi > 0.0 ? hi : 1.0);
    }
  }
}

void cmd_run(const Options& o) {
  const ExperimentConfig cfg = experiment_config(o);
  const std::optional<fs::path> out = o.out.empty() ? std::nullopt : std::optional<fs::path>(o.out);
  const PipelineReport r = run_pipeline(cfg, out, [](const std::string& msg) { std::cerr << msg << "\n"; });
  if (o.format == "json") std::cout << r.to_json();
  else std::cout << r.summary();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cityradar: synthetic radar detection with semantic city-model priors"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment (or waveform, for params) JSON");
    sub->add_option("--seed", o.seed, "Override the seed");
    sub->add_option("--out", o.out, "Output file or directory");
    sub->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"pgm", "ppm", "csv", "json"}));
  };
  struct Entry {
    const char* name;
    const char* help;
    void (*fn)(const Options&);
  };
  const std::vector<Entry> entries = {
      {"params", "Derive radar parameters from a waveform JSON", cmd_params},
      {"gen", "Generate a synthetic dataset", cmd_gen},
      {"ramap", "RDC1 cube to an RA map", cmd_ramap},
      {"sdm", "Raycast a semantic-depth map for one pose", cmd_sdm},
      {"pretrain", "Contrastive pretext training", cmd_pretrain},
      {"train", "Train the ConfMaps detector", cmd_train},
      {"infer", "Write ConfMaps for the test split", cmd_infer},
      {"nms", "ConfMaps to detections (JSON lines)", cmd_nms},
      {"eval", "Score detections against annotations", cmd_eval},
      {"sweep", "mAP/mAR over L-NMS OLS values", cmd_sweep},
      {"render", "Render an FMAP file to PGM/PPM", cmd_render},
      {"run", "Full pipeline over all configured seeds", cmd_run},
  };
  void (*selected)(const Options&) = nullptr;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    add_common(sub);
    sub->callback([&selected, fn = e.fn] { selected = fn; });
    const std::string name = e.name;
    if (name == "ramap" || name == "nms" || name == "eval" || name == "sweep" || name == "render") {
      sub->add_option("--in", o.in, "Input file or directory");
    }
    if (name == "pretrain" || name == "train" || name == "infer") sub->add_option("--data", o.data, "Dataset directory");
    if (name == "infer") sub->add_option("--model", o.model, "Detector directory");
    if (name == "train") {
      sub->add_option("--encoder", o.encoder, "Pretrained radar encoder directory");
      sub->add_flag("--use-sdm", o.use_sdm, "Fuse semantic-depth maps");
    }
    if (name == "eval" || name == "sweep") sub->add_option("--annotations", o.annotations, "GT JSON lines");
    if (name == "gen" || name == "sdm") sub->add_option("--city", o.city, "City model (overrides the config)");
    if (name == "sdm") sub->add_option("--pose", o.pose, "Pose index");
    if (name == "nms" || name == "eval" || name == "run") {
      sub->add_option("--ols", o.ols, "L-NMS suppression OLS threshold")->check(CLI::Range(0.0, 1.0));
      sub->add_option("--peak", o.peak, "Peak threshold")->check(CLI::Range(0.0, 1.0));
    }
    if (name == "sweep") {
      sub->add_option("--ols", o.ols_values, "OLS values to sweep");
      sub->add_option("--peak", o.peak, "Peak threshold")->check(CLI::Range(0.0, 1.0));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  try {
    selected(o);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const InvalidArgument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kOk;
}
