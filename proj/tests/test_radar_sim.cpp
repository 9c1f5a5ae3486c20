#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "cityradar/errors.hpp"
#include "cityradar/radar_sim.hpp"

using namespace cityradar;
using namespace std::complex_literals;

namespace {

constexpr double kPi = std::numbers::pi;
double deg(double d) { return d * kPi / 180.0; }

WaveformConfig small_config() {
  WaveformConfig cfg;
  cfg.n_chirps_per_frame = 4;
  return cfg;
}

}  // namespace

TEST(RadarSim, EmptySceneIsZero) {
  const RadarCube cube = simulate_frame({}, small_config(), std::nullopt, 1);
  EXPECT_EQ(cube.n_chirps(), 4);
  EXPECT_EQ(cube.n_antennas(), 8);
  EXPECT_EQ(cube.n_samples(), 256);
  EXPECT_EQ(cube.samples().cwiseAbs().maxCoeff(), 0.0);
}

TEST(RadarSim, SamplesFollowBeatSignalModel) {
  const WaveformConfig cfg = small_config();
  const PointTarget t{12.3, deg(17.0), 3.5, 0.8, ObjectClass::car};
  const RadarCube cube = simulate_frame(std::vector{t}, cfg, std::nullopt, 0);
  const double c = 299792458.0;
  const double lambda = c / cfg.carrier_freq;
  const double fb = 2.0 * cfg.chirp_bandwidth * t.range / (c * cfg.chirp_duration);
  const double fd = 2.0 * t.radial_velocity / lambda;
  double worst = 0.0;
  for (int k = 0; k < cfg.n_chirps_per_frame; ++k) {
    for (int a = 0; a < 8; ++a) {
      for (int s = 0; s < cfg.samples_per_chirp; s += 7) {
        const double ts = s * cfg.chirp_duration / cfg.samples_per_chirp;
        const double phase = fb * ts + fd * k * cfg.chirp_duration + 0.5 * std::sin(t.azimuth) * a;
        const std::complex<double> expected = t.amplitude * std::exp(2.0i * kPi * phase);
        worst = std::max(worst, std::abs(cube(k, a, s) - expected));
      }
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(RadarSim, RangeBinOfSingleTarget) {
  const WaveformConfig cfg = small_config();
  const double dr = derive_radar_params(cfg).range_resolution;
  const RadarCube cube = simulate_frame(std::vector{PointTarget{15.0, 0.0}}, cfg, std::nullopt, 0);
  // Naive DFT of one chirp/antenna row as an independent oracle.
  const int n = cfg.samples_per_chirp;
  int best = -1;
  double best_mag = -1.0;
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (int s = 0; s < n; ++s) acc += cube(0, 0, s) * std::exp(-2.0i * kPi * double(k) * double(s) / double(n));
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  EXPECT_EQ(best, static_cast<int>(std::lround(15.0 / dr)));
}

TEST(RadarSim, BoresightTargetHasEqualPhaseAcrossAntennas) {
  const RadarCube cube = simulate_frame(std::vector{PointTarget{8.0, 0.0}}, small_config(), std::nullopt, 0);
  for (int a = 1; a < 8; ++a) {
    for (int s = 0; s < 256; s += 17) {
      const double d = std::arg(cube(2, a, s) / cube(2, 0, s));
      EXPECT_LT(std::abs(d), 1e-9);
    }
  }
}

TEST(RadarSim, NoiselessScenesAreLinear) {
  const WaveformConfig cfg = small_config();
  const std::vector<PointTarget> a{{5.0, deg(10.0), 1.0, 1.0}};
  const std::vector<PointTarget> b{{9.0, deg(-30.0), -2.0, 0.4}, {20.0, deg(45.0), 0.0, 0.7}};
  std::vector<PointTarget> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const RadarCube::Samples sum =
      simulate_frame(a, cfg, std::nullopt, 0).samples() + simulate_frame(b, cfg, std::nullopt, 0).samples();
  EXPECT_LT((simulate_frame(ab, cfg, std::nullopt, 0).samples() - sum).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RadarSim, SameSeedIsBitIdentical) {
  const std::vector<PointTarget> t{{5.0, deg(10.0), 1.0, 1.0}};
  const auto x = simulate_frame(t, small_config(), 10.0, 42);
  const auto y = simulate_frame(t, small_config(), 10.0, 42);
  const auto z = simulate_frame(t, small_config(), 10.0, 43);
  EXPECT_TRUE(x.samples() == y.samples());
  EXPECT_FALSE(x.samples() == z.samples());
}

TEST(RadarSim, NoisePowerMatchesSnr) {
  WaveformConfig cfg = small_config();
  cfg.n_chirps_per_frame = 32;
  const auto cube = simulate_frame({}, cfg, 10.0, 7);
  const double power = cube.samples().cwiseAbs2().mean();
  EXPECT_NEAR(power, 0.1, 0.005);
}

TEST(RadarSim, SignalPowerConstantAcrossChirps) {
  const auto cube = simulate_frame(std::vector{PointTarget{6.0, deg(5.0), 4.0, 1.0}}, small_config(), std::nullopt, 0);
  for (int c = 0; c < cube.n_chirps(); ++c) {
    double p = 0.0;
    for (int s = 0; s < cube.n_samples(); ++s) p += std::norm(cube(c, 3, s));
    EXPECT_NEAR(p, 256.0, 1e-9);
  }
}

TEST(RadarSim, RejectsTargetsOutsideFovOrRange) {
  const WaveformConfig cfg = small_config();
  const std::vector<PointTarget> fov{{5.0, 0.0}, {5.0, deg(61.0)}};
  try {
    simulate_frame(fov, cfg, std::nullopt, 0);
    FAIL() << "expected rejection";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("#1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(simulate_frame(std::vector{PointTarget{40.0, 0.0}}, cfg, std::nullopt, 0), InvalidArgument);
  EXPECT_THROW(simulate_frame(std::vector{PointTarget{5.0, 0.0, 0.0, 0.0}}, cfg, std::nullopt, 0), InvalidArgument);
}

TEST(Ghost, BoresightMirror) {
  const ReflectorLine boresight{Eigen::Vector2d::Zero(), Eigen::Vector2d::UnitY()};
  const auto scene = inject_ghost(std::vector{PointTarget{10.0, deg(20.0), 0.0, 1.0}}, boresight);
  ASSERT_EQ(scene.targets.size(), 2u);
  EXPECT_EQ(scene.origins[1], TargetOrigin::ghost);
  EXPECT_NEAR(scene.targets[1].range, 10.0, 1e-12);
  EXPECT_NEAR(scene.targets[1].azimuth, deg(-20.0), 1e-12);
  EXPECT_DOUBLE_EQ(scene.targets[1].amplitude, 0.5);
}

TEST(Ghost, TargetOnReflectorIsKeptAndFlagged) {
  const ReflectorLine wall{Eigen::Vector2d(0.0, 0.0), Eigen::Vector2d::UnitY()};
  const auto scene = inject_ghost(std::vector{PointTarget{7.0, 0.0}}, wall);
  ASSERT_EQ(scene.targets.size(), 2u);
  EXPECT_EQ(scene.origins[1], TargetOrigin::ghost_on_reflector);
  EXPECT_DOUBLE_EQ(scene.targets[1].range, 7.0);
  EXPECT_DOUBLE_EQ(scene.targets[1].azimuth, 0.0);
}

TEST(Ghost, MirrorOutsideFovIsDropped) {
  // Reflecting across a line at 45 deg maps bearing 15 deg to 2*45 - 15 = 75 deg.
  const Eigen::Vector2d normal(-std::sin(deg(45.0)), std::cos(deg(45.0)));
  const auto scene = inject_ghost(std::vector{PointTarget{10.0, deg(15.0)}}, {Eigen::Vector2d::Zero(), normal});
  EXPECT_EQ(scene.targets.size(), 1u);
  // The same reflector keeps a ghost that lands inside the FoV: 2*45 - 40 = 50 deg.
  const auto kept = inject_ghost(std::vector{PointTarget{10.0, deg(40.0)}}, {Eigen::Vector2d::Zero(), normal});
  ASSERT_EQ(kept.targets.size(), 2u);
  EXPECT_NEAR(kept.targets[1].azimuth, deg(50.0), 1e-12);
}

TEST(Ghost, FacadeMirrorAndRangeFilter) {
  // Wall 5 m to the left: a boresight target at 12 m mirrors to (12, 10).
  const ReflectorLine wall{Eigen::Vector2d(0.0, 5.0), Eigen::Vector2d(0.0, -3.0)};
  const auto scene = inject_ghost(std::vector{PointTarget{12.0, 0.0}}, wall, {0.25, 0.0, kFieldOfView});
  ASSERT_EQ(scene.targets.size(), 2u);
  EXPECT_NEAR(scene.targets[1].range, std::hypot(12.0, 10.0), 1e-12);
  EXPECT_NEAR(scene.targets[1].azimuth, std::atan2(10.0, 12.0), 1e-12);
  EXPECT_DOUBLE_EQ(scene.targets[1].amplitude, 0.25);
  EXPECT_EQ(inject_ghost(std::vector{PointTarget{12.0, 0.0}}, wall, {0.5, 15.0, kFieldOfView}).targets.size(), 1u);
}

TEST(Ghost, ZeroNormalRejected) {
  EXPECT_THROW(inject_ghost(std::vector{PointTarget{}}, {Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()}),
               InvalidArgument);
}
