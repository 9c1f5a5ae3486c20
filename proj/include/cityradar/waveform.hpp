#pragma once

#include <json.hpp>

namespace cityradar {

inline constexpr double kSpeedOfLight = 299'792'458.0;

/// FMCW chirp/frame configuration. Defaults are the 77 GHz street-side setup
/// (2 Tx x 4 Rx TDM-MIMO, 1024.6 MHz effective bandwidth, 255 chirps).
struct WaveformConfig {
  double carrier_freq = 77e9;        // Hz
  double chirp_bandwidth = 1024.6e6; // Hz
  int n_chirps_per_frame = 255;
  int n_tx = 2;
  int n_rx = 4;
  int samples_per_chirp = 256;
  double chirp_duration = 50e-6;     // s
  double frame_rate = 15.0;          // frames/s

  int n_virtual() const { return n_tx * n_rx; }
  double wavelength() const { return kSpeedOfLight / carrier_freq; }

  /// Throws InvalidArgument naming the first offending field.
  void validate() const;

  bool operator==(const WaveformConfig&) const = default;
};

struct RadarParams {
  double range_resolution = 0.0;    // m
  double unambiguous_range = 0.0;   // m
  int n_virtual = 0;
  double angular_resolution = 0.0;  // deg, boresight, half-wavelength ULA
  double wavelength = 0.0;          // m
  double velocity_resolution = 0.0; // m/s over one frame of chirps
};

RadarParams derive_radar_params(const WaveformConfig& cfg);

void to_json(nlohmann::json& j, const WaveformConfig& cfg);
void from_json(const nlohmann::json& j, WaveformConfig& cfg);
void to_json(nlohmann::json& j, const RadarParams& p);

}  // namespace cityradar
