#include "cityradar/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cityradar/errors.hpp"

namespace cityradar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

void put_u32(std::ostream& os, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  os.write(reinterpret_cast<const char*>(&v), 4);
}

void put_f32(std::ostream& os, double value) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw ParseError(std::string("truncated ") + what);
  if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
  return v;
}

float get_f32(std::istream& is, const char* what) { return std::bit_cast<float>(get_u32(is, what)); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4] = {};
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw ParseError(std::string("bad magic, expected ") + magic);
  }
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path.string());
  return is;
}

json axis_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd axis_from(const json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

void write_rdc1(std::ostream& os, const RadarCube& cube) {
  os.write("RDC1", 4);
  put_u32(os, static_cast<std::uint32_t>(cube.n_chirps()));
  put_u32(os, static_cast<std::uint32_t>(cube.n_antennas()));
  put_u32(os, static_cast<std::uint32_t>(cube.n_samples()));
  for (int c = 0; c < cube.n_chirps(); ++c) {
    for (int a = 0; a < cube.n_antennas(); ++a) {
      for (int s = 0; s < cube.n_samples(); ++s) {
        put_f32(os, cube(c, a, s).real());
        put_f32(os, cube(c, a, s).imag());
      }
    }
  }
}

void write_rdc1(const fs::path& path, const RadarCube& cube) {
  auto os = open_out(path);
  write_rdc1(os, cube);
}

RadarCube read_rdc1(std::istream& is, const WaveformConfig& cfg) {
  expect_magic(is, "RDC1");
  const auto chirps = get_u32(is, "RDC1 header");
  const auto antennas = get_u32(is, "RDC1 header");
  const auto samples = get_u32(is, "RDC1 header");
  if (chirps != static_cast<std::uint32_t>(cfg.n_chirps_per_frame) ||
      antennas != static_cast<std::uint32_t>(cfg.n_virtual()) ||
      samples != static_cast<std::uint32_t>(cfg.samples_per_chirp)) {
    std::ostringstream os;
    os << "RDC1 dims " << chirps << "x" << antennas << "x" << samples << " do not match the waveform ("
       << cfg.n_chirps_per_frame << "x" << cfg.n_virtual() << "x" << cfg.samples_per_chirp << ")";
    throw ParseError(os.str());
  }
  RadarCube cube(cfg);
  for (std::uint32_t c = 0; c < chirps; ++c) {
    for (std::uint32_t a = 0; a < antennas; ++a) {
      for (std::uint32_t s = 0; s < samples; ++s) {
        const float re = get_f32(is, "RDC1 data");
        const float im = get_f32(is, "RDC1 data");
        cube(c, a, s) = {re, im};
      }
    }
  }
  return cube;
}

RadarCube read_rdc1(const fs::path& path, const WaveformConfig& cfg) {
  auto is = open_in(path);
  try {
    return read_rdc1(is, cfg);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_fmap(std::ostream& os, const MapStack& maps) {
  const Eigen::Index rows = maps.empty() ? 0 : maps[0].rows(), cols = maps.empty() ? 0 : maps[0].cols();
  for (const auto& m : maps) {
    if (m.rows() != rows || m.cols() != cols) throw InvalidArgument("write_fmap: channel shapes differ");
  }
  os.write("FMAP", 4);
  put_u32(os, static_cast<std::uint32_t>(maps.size()));
  put_u32(os, static_cast<std::uint32_t>(rows));
  put_u32(os, static_cast<std::uint32_t>(cols));
  for (const auto& m : maps) {
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) put_f32(os, m(i, j));
    }
  }
}

void write_fmap(const fs::path& path, const MapStack& maps) {
  auto os = open_out(path);
  write_fmap(os, maps);
}

MapStack read_fmap(std::istream& is) {
  expect_magic(is, "FMAP");
  const auto channels = get_u32(is, "FMAP header");
  const auto rows = get_u32(is, "FMAP header");
  const auto cols = get_u32(is, "FMAP header");
  MapStack maps(channels, Eigen::MatrixXd(rows, cols));
  for (auto& m : maps) {
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = get_f32(is, "FMAP data");
    }
  }
  return maps;
}

MapStack read_fmap(const fs::path& path) {
  auto is = open_in(path);
  try {
    return read_fmap(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path sidecar_path(const fs::path& fmap) {
  fs::path p = fmap;
  return p.replace_extension(".json");
}

void write_ramap(const fs::path& path, const RAMap& map) {
  write_fmap(path, MapStack{map.grid});
  json j;
  j["frame"] = map.frame_id;
  j["range_axis_m"] = axis_json(map.range_axis);
  j["azimuth_axis_rad"] = axis_json(map.azimuth_axis);
  write_text(sidecar_path(path), j.dump() + "\n");
}

RAMap read_ramap(const fs::path& path) {
  const MapStack maps = read_fmap(path);
  if (maps.size() != 1) throw ParseError(path.string() + ": RA map must have one channel");
  const json j = read_json(sidecar_path(path));
  RAMap map;
  map.grid = maps[0];
  try {
    map.frame_id = j.at("frame").get<std::string>();
    map.range_axis = axis_from(j, "range_axis_m");
    map.azimuth_axis = axis_from(j, "azimuth_axis_rad");
  } catch (const json::exception& e) {
    throw ParseError(sidecar_path(path).string() + ": " + e.what());
  }
  if (map.range_axis.size() != map.grid.rows() || map.azimuth_axis.size() != map.grid.cols()) {
    throw ParseError(path.string() + ": axes do not match the map");
  }
  return map;
}

void write_confmaps(const fs::path& path, const ConfMaps& maps, const Eigen::VectorXd& range_axis,
                    const Eigen::VectorXd& azimuth_axis, const std::string& frame) {
  write_fmap(path, maps.channels);
  json j;
  j["frame"] = frame;
  j["range_axis_m"] = axis_json(range_axis);
  j["azimuth_axis_rad"] = axis_json(azimuth_axis);
  write_text(sidecar_path(path), j.dump() + "\n");
}

LoadedConfMaps read_confmaps(const fs::path& path) {
  LoadedConfMaps out;
  out.maps.channels = read_fmap(path);
  if (out.maps.channels.size() != static_cast<std::size_t>(kNumClasses)) {
    throw ParseError(path.string() + ": expected " + std::to_string(kNumClasses) + " channels");
  }
  const json j = read_json(sidecar_path(path));
  try {
    out.frame = j.value("frame", std::string{});
    out.range_axis = axis_from(j, "range_axis_m");
    out.azimuth_axis = axis_from(j, "azimuth_axis_rad");
  } catch (const json::exception& e) {
    throw ParseError(sidecar_path(path).string() + ": " + e.what());
  }
  return out;
}

void write_sdm(const fs::path& path, const Sdm& sdm) {
  MapStack maps = sdm.semantic;
  maps.push_back(sdm.depth);
  maps.push_back(sdm.mask.cast<double>());
  write_fmap(path, maps);
  json j;
  j["class_names"] = sdm.class_names;
  j["max_range_m"] = sdm.max_range;
  write_text(sidecar_path(path), j.dump() + "\n");
}

Sdm read_sdm(const fs::path& path) {
  MapStack maps = read_fmap(path);
  const json j = read_json(sidecar_path(path));
  Sdm sdm;
  try {
    sdm.class_names = j.at("class_names").get<std::vector<std::string>>();
    sdm.max_range = j.at("max_range_m").get<double>();
  } catch (const json::exception& e) {
    throw ParseError(sidecar_path(path).string() + ": " + e.what());
  }
  if (maps.size() != sdm.class_names.size() + 2) {
    throw ParseError(path.string() + ": channel count does not match the class list");
  }
  sdm.mask = maps.back().array() > 0.5;
  maps.pop_back();
  sdm.depth = maps.back();
  maps.pop_back();
  sdm.semantic = std::move(maps);
  return sdm;
}

std::string annotation_line(const GtAnnotation& a) {
  nlohmann::ordered_json j;
  j["frame"] = a.frame;
  j["class"] = to_string(a.class_label);
  j["range_m"] = a.range;
  j["azimuth_deg"] = a.azimuth * kDeg;
  return j.dump();
}

std::string detection_line(const Detection& d) {
  nlohmann::ordered_json j;
  j["frame"] = d.frame;
  j["class"] = to_string(d.class_label);
  j["range_m"] = d.range;
  j["azimuth_deg"] = d.azimuth * kDeg;
  j["conf"] = d.confidence;
  return j.dump();
}

void write_annotations(std::ostream& os, std::span<const GtAnnotation> annotations) {
  for (const auto& a : annotations) os << annotation_line(a) << '\n';
}

void write_detections(std::ostream& os, std::span<const Detection> detections) {
  for (const auto& d : detections) os << detection_line(d) << '\n';
}

namespace {

template <class F>
void for_each_json_line(std::istream& is, F&& f) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<GtAnnotation> read_annotations(std::istream& is) {
  std::vector<GtAnnotation> out;
  for_each_json_line(is, [&](const json& j) {
    out.push_back({j.at("frame").get<std::string>(), object_class_from_string(j.at("class").get<std::string>()),
                   j.at("range_m").get<double>(), j.at("azimuth_deg").get<double>() / kDeg});
  });
  return out;
}

std::vector<Detection> read_detections(std::istream& is) {
  std::vector<Detection> out;
  for_each_json_line(is, [&](const json& j) {
    Detection d;
    d.frame = j.at("frame").get<std::string>();
    d.class_label = object_class_from_string(j.at("class").get<std::string>());
    d.range = j.at("range_m").get<double>();
    d.azimuth = j.at("azimuth_deg").get<double>() / kDeg;
    d.confidence = j.at("conf").get<double>();
    if (d.confidence < 0.0 || d.confidence > 1.0) throw ParseError("conf outside [0, 1]");
    out.push_back(std::move(d));
  });
  return out;
}

void write_annotations(const fs::path& path, std::span<const GtAnnotation> annotations) {
  auto os = open_out(path);
  write_annotations(os, annotations);
}

void write_detections(const fs::path& path, std::span<const Detection> detections) {
  auto os = open_out(path);
  write_detections(os, detections);
}

std::vector<GtAnnotation> read_annotations(const fs::path& path) {
  auto is = open_in(path);
  try {
    return read_annotations(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<Detection> read_detections(const fs::path& path) {
  auto is = open_in(path);
  try {
    return read_detections(is);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
}

std::string read_text(const fs::path& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

namespace {

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ParseError("unknown activation '" + s + "'");
}

Eigen::MatrixXd read_tensor(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const MapStack m = read_fmap(path);
  if (m.size() != 1 || m[0].rows() != rows || m[0].cols() != cols) {
    throw ParseError(path.string() + ": unexpected tensor shape");
  }
  return m[0];
}

json mlp_manifest(const fs::path& dir, const std::string& prefix, const MlpParams& mlp) {
  json layers = json::array();
  for (std::size_t l = 0; l < mlp.layers().size(); ++l) {
    const auto& layer = mlp.layers()[l];
    const std::string stem = prefix + "layer" + std::to_string(l);
    write_fmap(dir / (stem + "_weight.fmap"), MapStack{layer.weight});
    write_fmap(dir / (stem + "_bias.fmap"), MapStack{layer.bias});
    layers.push_back({{"in", layer.weight.cols()},
                      {"out", layer.weight.rows()},
                      {"activation", activation_name(layer.activation)},
                      {"weight", stem + "_weight.fmap"},
                      {"bias", stem + "_bias.fmap"}});
  }
  return layers;
}

MlpParams mlp_from_manifest(const fs::path& dir, const json& layers) {
  std::vector<DenseLayer<double>> out;
  for (const auto& l : layers) {
    const auto in = l.at("in").get<Eigen::Index>(), n = l.at("out").get<Eigen::Index>();
    DenseLayer<double> layer;
    layer.weight = read_tensor(dir / l.at("weight").get<std::string>(), n, in);
    layer.bias = read_tensor(dir / l.at("bias").get<std::string>(), n, 1);
    layer.activation = activation_from(l.at("activation").get<std::string>());
    out.push_back(std::move(layer));
  }
  return MlpParams(std::move(out));
}

}  // namespace

void save_mlp(const fs::path& dir, const MlpParams& mlp) {
  fs::create_directories(dir);
  json manifest;
  manifest["kind"] = "mlp";
  manifest["layers"] = mlp_manifest(dir, "", mlp);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

MlpParams load_mlp(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  try {
    return mlp_from_manifest(dir, manifest.at("layers"));
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
}

json detector_config_to_json(const DetectorConfig& c) {
  json j;
  j["use_sdm"] = c.use_sdm;
  j["fusion"] = c.fusion == FusionMode::add ? "add" : "concat";
  j["radar_channels"] = c.radar_channels;
  j["sdm_channels"] = c.sdm_channels;
  j["hidden"] = c.hidden;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["freeze_encoder"] = c.freeze_encoder;
  j["prior"] = c.prior;
  j["sigma_scale"] = c.sigma_scale;
  j["encoder_side"] = c.encoder_side;
  j["seed"] = c.seed;
  j["kappa"] = {{"pedestrian", c.kappa.kappa[0]}, {"cyclist", c.kappa.kappa[1]}, {"car", c.kappa.kappa[2]}};
  return j;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig c;
  try {
    c.use_sdm = j.value("use_sdm", c.use_sdm);
    const std::string fusion = j.value("fusion", std::string("concat"));
    if (fusion == "add") c.fusion = FusionMode::add;
    else if (fusion == "concat") c.fusion = FusionMode::concat;
    else throw ParseError("unknown fusion mode '" + fusion + "'");
    c.radar_channels = j.value("radar_channels", c.radar_channels);
    c.sdm_channels = j.value("sdm_channels", c.sdm_channels);
    c.hidden = j.value("hidden", c.hidden);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
    c.prior = j.value("prior", c.prior);
    c.sigma_scale = j.value("sigma_scale", c.sigma_scale);
    c.encoder_side = j.value("encoder_side", c.encoder_side);
    c.seed = j.value("seed", c.seed);
    if (j.contains("kappa")) {
      for (ObjectClass cls : kObjectClasses) {
        c.kappa.kappa[index_of(cls)] = j["kappa"].value(to_string(cls), c.kappa.kappa[index_of(cls)]);
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("detector config: ") + e.what());
  }
  c.validate();
  return c;
}

json ssl_config_to_json(const SslConfig& c) {
  return {{"tau", c.tau},
          {"m", c.m},
          {"queue_capacity", c.queue_capacity},
          {"embed_dim", c.embed_dim},
          {"proj_dim", c.proj_dim},
          {"hidden_dim", c.hidden_dim},
          {"input_side", c.input_side},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

SslConfig ssl_config_from_json(const json& j) {
  SslConfig c;
  try {
    c.tau = j.value("tau", c.tau);
    c.m = j.value("m", c.m);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.proj_dim = j.value("proj_dim", c.proj_dim);
    c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
    c.input_side = j.value("input_side", c.input_side);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ParseError(std::string("ssl config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_detector(const fs::path& dir, const DetectorModel<float>& model) {
  fs::create_directories(dir);
  const DetectorModel<double> m = model.cast<double>();
  json manifest;
  manifest["kind"] = "detector";
  manifest["config"] = detector_config_to_json(m.config);
  manifest["sdm_classes"] = m.sdm_classes;
  manifest["encoder"] = mlp_manifest(dir, "encoder_", m.encoder);
  auto put = [&](const char* name, const Eigen::MatrixXd& t) {
    write_fmap(dir / (std::string(name) + ".fmap"), MapStack{t});
    manifest["tensors"][name] = {t.rows(), t.cols()};
  };
  put("local_weight", m.local_weight);
  put("global_weight", m.global_weight);
  put("radar_bias", m.radar_bias);
  put("sdm_weight", m.sdm_weight);
  put("hidden_weight", m.hidden_weight);
  put("hidden_bias", m.hidden_bias);
  put("out_weight", m.out_weight);
  put("out_bias", m.out_bias);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

DetectorModel<float> load_detector(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  DetectorModel<double> m;
  try {
    m.config = detector_config_from_json(manifest.at("config"));
    m.sdm_classes = manifest.at("sdm_classes").get<std::vector<std::string>>();
    m.encoder = mlp_from_manifest(dir, manifest.at("encoder"));
    auto get = [&](const char* name) {
      const auto shape = manifest.at("tensors").at(name).get<std::array<Eigen::Index, 2>>();
      if (shape[0] * shape[1] == 0) return Eigen::MatrixXd(shape[0], shape[1]);
      return read_tensor(dir / (std::string(name) + ".fmap"), shape[0], shape[1]);
    };
    m.local_weight = get("local_weight");
    m.global_weight = get("global_weight");
    m.radar_bias = get("radar_bias");
    m.sdm_weight = get("sdm_weight");
    m.hidden_weight = get("hidden_weight");
    m.hidden_bias = get("hidden_bias");
    m.out_weight = get("out_weight");
    m.out_bias = get("out_bias");
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  return m.cast<float>();
}

}  // namespace cityradar
