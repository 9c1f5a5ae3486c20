#include "cityradar/waveform.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cityradar/errors.hpp"
#include "cityradar/object_class.hpp"

namespace cityradar {

std::string_view to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::pedestrian: return "pedestrian";
    case ObjectClass::cyclist: return "cyclist";
    case ObjectClass::car: return "car";
  }
  return "unknown";
}

ObjectClass object_class_from_string(std::string_view name) {
  for (ObjectClass c : kObjectClasses) {
    if (to_string(c) == name) return c;
  }
  throw ParseError("unknown object class '" + std::string(name) + "'");
}

namespace {

void require_positive(double v, const char* field) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw InvalidArgument(std::string("waveform: ") + field + " must be positive and finite");
  }
}

}  // namespace

void WaveformConfig::validate() const {
  require_positive(carrier_freq, "carrier_freq");
  require_positive(chirp_bandwidth, "chirp_bandwidth");
  require_positive(n_chirps_per_frame, "n_chirps_per_frame");
  require_positive(n_tx, "n_tx");
  require_positive(n_rx, "n_rx");
  require_positive(samples_per_chirp, "samples_per_chirp");
  require_positive(chirp_duration, "chirp_duration");
  require_positive(frame_rate, "frame_rate");
  if (n_virtual() < 2) throw InvalidArgument("waveform: n_tx * n_rx must be at least 2");
  if ((samples_per_chirp & (samples_per_chirp - 1)) != 0) {
    throw InvalidArgument("waveform: samples_per_chirp must be a power of two");
  }
}

RadarParams derive_radar_params(const WaveformConfig& cfg) {
  cfg.validate();
  RadarParams p;
  p.range_resolution = kSpeedOfLight / (2.0 * cfg.chirp_bandwidth);
  p.unambiguous_range = p.range_resolution * cfg.samples_per_chirp;
  p.n_virtual = cfg.n_virtual();
  // Rayleigh beamwidth 2/N rad of a lambda/2 ULA at boresight.
  p.angular_resolution = (2.0 / p.n_virtual) * 180.0 / std::numbers::pi;
  p.wavelength = cfg.wavelength();
  p.velocity_resolution = p.wavelength / (2.0 * cfg.n_chirps_per_frame * cfg.chirp_duration);
  return p;
}

void to_json(nlohmann::json& j, const WaveformConfig& cfg) {
  j = nlohmann::json{{"carrier_freq", cfg.carrier_freq},
                     {"chirp_bandwidth", cfg.chirp_bandwidth},
                     {"n_chirps_per_frame", cfg.n_chirps_per_frame},
                     {"n_tx", cfg.n_tx},
                     {"n_rx", cfg.n_rx},
                     {"samples_per_chirp", cfg.samples_per_chirp},
                     {"chirp_duration", cfg.chirp_duration},
                     {"frame_rate", cfg.frame_rate}};
}

void from_json(const nlohmann::json& j, WaveformConfig& cfg) {
  try {
    j.at("carrier_freq").get_to(cfg.carrier_freq);
    j.at("chirp_bandwidth").get_to(cfg.chirp_bandwidth);
    j.at("n_chirps_per_frame").get_to(cfg.n_chirps_per_frame);
    j.at("n_tx").get_to(cfg.n_tx);
    j.at("n_rx").get_to(cfg.n_rx);
    j.at("samples_per_chirp").get_to(cfg.samples_per_chirp);
    j.at("chirp_duration").get_to(cfg.chirp_duration);
    j.at("frame_rate").get_to(cfg.frame_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("waveform config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const RadarParams& p) {
  j = nlohmann::json{{"range_resolution", p.range_resolution},
                     {"unambiguous_range", p.unambiguous_range},
                     {"n_virtual", p.n_virtual},
                     {"angular_resolution", p.angular_resolution},
                     {"wavelength", p.wavelength},
                     {"velocity_resolution", p.velocity_resolution}};
}

}  // namespace cityradar
