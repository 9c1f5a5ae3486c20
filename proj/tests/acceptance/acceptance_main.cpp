// Acceptance checks, one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "cityradar/citymodel.hpp"
#include "cityradar/detect.hpp"
#include "cityradar/eval.hpp"
#include "cityradar/experiment.hpp"
#include "cityradar/io.hpp"
#include "cityradar/nn.hpp"
#include "cityradar/postproc.hpp"
#include "cityradar/ra_map.hpp"
#include "cityradar/radar_sim.hpp"
#include "cityradar/waveform.hpp"
#include "reference_match.hpp"
#include "support.hpp"

using namespace cityradar;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Check = std::function<void(Outcome&)>;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void waveform_constants(Outcome& o) {
  const RadarParams p = derive_radar_params(WaveformConfig{});
  o.detail << "dr=" << p.range_resolution << " m, r_max=" << p.unambiguous_range << " m, n_virtual=" << p.n_virtual
           << ", angular=" << p.angular_resolution << " deg";
  o.require(std::abs(p.range_resolution - 0.146) <= 0.001, "range resolution");
  o.require(p.n_virtual == 8, "n_virtual");
  o.require(std::abs(p.unambiguous_range - 37.38) <= 0.5, "unambiguous range");
  o.require(p.angular_resolution >= 13.0 && p.angular_resolution <= 16.0, "angular resolution");
}

void gradient_suite(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(2, 10), size(2, 12);
  std::uniform_real_distribution<double> tau(0.05, 1.0);
  double worst_nce = 0.0, worst_bce = 0.0;
  for (int k = 0; k < 100; ++k) {
    const int d = dim(rng), n = size(rng);
    NegativeQueue<double> queue(n, d);
    queue.push(testkit::random_matrix(d, n, rng));
    const Eigen::VectorXd q = testkit::random_matrix(d, 1, rng);
    const Eigen::Index pos = k % n;
    const double t = tau(rng);
    const auto r = info_nce_loss_and_grad<double>(q, pos, queue, t);
    const auto f = [&](const Eigen::VectorXd& v) { return info_nce_loss_and_grad<double>(v, pos, queue, t).loss; };
    worst_nce = std::max(worst_nce, testkit::max_relative_error(r.grad, testkit::numeric_gradient(f, q)));
  }
  for (int k = 0; k < 100; ++k) {
    const int h = size(rng) / 2 + 1, w = size(rng) / 2 + 1;
    std::vector<Eigen::MatrixXd> pred, gt;
    for (int c = 0; c < 3; ++c) {
      pred.push_back(testkit::random_matrix(h, w, rng, 0.02, 0.98));
      gt.push_back(testkit::random_matrix(h, w, rng, 0.0, 1.0));
    }
    const auto r = bce_loss_and_grad<double>(pred, gt);
    Eigen::VectorXd x(3 * h * w), analytic(3 * h * w);
    for (int c = 0; c < 3; ++c) {
      x.segment(c * h * w, h * w) = pred[c].reshaped();
      analytic.segment(c * h * w, h * w) = r.grad[c].reshaped();
    }
    const auto f = [&](const Eigen::VectorXd& v) {
      std::vector<Eigen::MatrixXd> p;
      for (int c = 0; c < 3; ++c) p.push_back(v.segment(c * h * w, h * w).reshaped(h, w));
      return bce_loss_and_grad<double>(p, gt).loss;
    };
    worst_bce = std::max(worst_bce, testkit::max_relative_error(analytic, testkit::numeric_gradient(f, x)));
  }
  const double secs = seconds_since(t0);
  o.detail << "100+100 instances, max rel err InfoNCE " << worst_nce << ", BCE " << worst_bce << ", " << secs << " s";
  o.require(worst_nce < 1e-5, "InfoNCE gradient");
  o.require(worst_bce < 1e-5, "BCE gradient");
  o.require(secs < 10.0, "runtime");
}

void fft_localization(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const WaveformConfig cfg = ExperimentConfig{}.waveform;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> range(2.0, 17.0), az(-60.0 * kPi / 180, 60.0 * kPi / 180), vel(-5.0, 5.0);
  int ok = 0, total = 0;
  for (int k = 0; k < 30; ++k) {
    const PointTarget t{range(rng), az(rng), vel(rng), 1.0, ObjectClass::car};
    const std::optional<double> snr = k < 20 ? std::nullopt : std::optional<double>(10.0);
    const RAMap map = cube_to_ra_map(simulate_frame(std::vector{t}, cfg, snr, 1000 + k), 128, 64);
    Eigen::Index i = 0, j = 0;
    map.grid.maxCoeff(&i, &j);
    const int oi = nearest_index(map.range_axis, t.range), oj = nearest_index(map.azimuth_axis, t.azimuth);
    ok += std::abs(i - oi) <= 1 && std::abs(j - oj) <= 1;
    ++total;
  }
  const double secs = seconds_since(t0);
  o.detail << ok << "/" << total << " within one bin (20 noiseless, 10 at 10 dB), " << secs << " s";
  o.require(ok >= 0.95 * total, "localisation rate");
  o.require(secs < 30.0, "runtime");
}

void ols_exactness(Outcome& o) {
  const double s = 11.0, kappa = 0.015;
  o.require(ols(0.0, s, kappa) == 1.0, "d = 0");
  const double at_tol = ols(s * kappa, s, kappa);
  o.require(std::abs(at_tol - std::exp(-0.5)) < 1e-12, "d = s kappa");
  bool monotone = true;
  double prev = ols(0.0, s, kappa);
  for (int k = 1; k <= 1000; ++k) {
    const double v = ols(k * 1e-3 * s * kappa, s, kappa);
    monotone = monotone && v < prev;
    prev = v;
  }
  o.require(monotone, "strict decrease over 1000 points");
  o.detail << "OLS(s kappa) = " << std::setprecision(15) << at_tol;
}

void lnms_contract(Outcome& o) {
  std::mt19937_64 rng(5);
  const Eigen::VectorXd ra = Eigen::VectorXd::LinSpaced(128, 0.0, 127 * 0.1463);
  Eigen::VectorXd az(64);
  for (int j = 0; j < 64; ++j) az[j] = std::asin(2.0 * (j - 32) / 64.0);
  const KappaTable kappa;
  std::uniform_int_distribution<int> ri(10, 117), aj(4, 59), count(1, 8), cls(0, 2);
  std::uniform_real_distribution<double> peak(0.35, 1.0), width(0.6, 2.5), thr(0.3, 0.95);
  int violations = 0, single_fail = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ConfMaps maps = ConfMaps::zeros(128, 64);
    const int n = count(rng);
    for (int k = 0; k < n; ++k) {
      Eigen::MatrixXd& ch = maps.channels[cls(rng)];
      const int ci = ri(rng), cj = aj(rng);
      const double p = peak(rng), w = width(rng);
      for (int i = 0; i < 128; ++i) {
        for (int j = 0; j < 64; ++j) {
          ch(i, j) = std::max(ch(i, j), p * std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2 * w * w)));
        }
      }
    }
    const NmsOptions opts{0.3, thr(rng)};
    const auto dets = l_nms(maps, ra, az, kappa, opts);
    for (std::size_t a = 0; a < dets.size(); ++a) {
      for (std::size_t b = a + 1; b < dets.size(); ++b) {
        if (dets[a].class_label != dets[b].class_label) continue;
        const Detection& kept = dets[a].confidence >= dets[b].confidence ? dets[a] : dets[b];
        const double v = ols(polar_distance(dets[a].range, dets[a].azimuth, dets[b].range, dets[b].azimuth),
                             kept.range, kappa[kept.class_label]);
        violations += v > opts.ols_threshold;
      }
    }
    // One isolated bump of a random class.
    ConfMaps single = ConfMaps::zeros(128, 64);
    const int c = cls(rng), ci = ri(rng), cj = aj(rng);
    const double w = width(rng);
    for (int i = 0; i < 128; ++i) {
      for (int j = 0; j < 64; ++j) {
        single.channels[c](i, j) = 0.9 * std::exp(-((i - ci) * (i - ci) + (j - cj) * (j - cj)) / (2 * w * w));
      }
    }
    const auto one = l_nms(single, ra, az, kappa, opts);
    single_fail += !(one.size() == 1 && one[0].range_bin == ci && one[0].azimuth_bin == cj);
  }
  o.detail << "50 cases, " << violations << " suppression violations, " << single_fail << " single-bump failures";
  o.require(violations == 0, "suppression");
  o.require(single_fail == 0, "single bump");
}

void evaluator_oracle(Outcome& o) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> r(3.0, 15.0), az(-0.7, 0.7), conf(0.05, 1.0);
  std::uniform_int_distribution<int> cls(0, 2), n_obj(0, 5);
  const KappaTable kappa;

  std::vector<GtAnnotation> gts;
  for (int f = 0; f < 10; ++f) {
    for (int k = 0; k < 3; ++k) gts.push_back({"f" + std::to_string(f), static_cast<ObjectClass>(cls(rng)), r(rng), az(rng)});
  }
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back({g.frame, g.class_label, g.range, g.azimuth, conf(rng), -1, -1});
  const EvalReport perfect = evaluate(dets, gts, kappa);
  o.require(perfect.map == 1.0 && perfect.mar == 1.0, "perfect detections");

  const int k = 7;
  std::vector<GtAnnotation> frame_gt;
  for (int i = 0; i < k; ++i) frame_gt.push_back({"g", ObjectClass::pedestrian, 3.0 + 1.7 * i, 0.1 * (i - 3)});
  std::vector<Detection> frame_det;
  for (int i = 0; i + 1 < k; ++i) {
    frame_det.push_back({"g", ObjectClass::pedestrian, frame_gt[i].range, frame_gt[i].azimuth, 0.9, -1, -1});
  }
  const EvalReport missing = evaluate(frame_det, frame_gt, kappa);
  o.require(missing.mar == static_cast<double>(k - 1) / k, "AR (k-1)/k");

  // Radial offset delta at 9 m: OLS(delta) is known in closed form.
  const double s = 9.0, delta = 0.1;
  const double expected = std::exp(-delta * delta / (2 * std::pow(s * kappa[ObjectClass::cyclist], 2)));
  const std::vector<GtAnnotation> jg{{"j", ObjectClass::cyclist, s, 0.2}};
  const std::vector<Detection> jd{{"j", ObjectClass::cyclist, s + delta, 0.2, 0.8, -1, -1}};
  const EvalReport jitter = evaluate(jd, jg, kappa);
  bool flip_ok = true;
  for (const auto& t : jitter.per_threshold) flip_ok = flip_ok && ((t.counts.tp == 1) == (expected >= t.threshold));
  o.require(flip_ok, "jitter flip threshold");

  int disagreements = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GtAnnotation> fg;
    std::vector<Detection> fd;
    const int ng = n_obj(rng), nd = n_obj(rng);
    const double cr = r(rng), ca = az(rng);
    std::normal_distribution<double> spread(0.0, 0.25);
    for (int i = 0; i < ng; ++i) fg.push_back({"x", static_cast<ObjectClass>(cls(rng) % 2), cr + spread(rng), ca + 0.02 * spread(rng)});
    for (int i = 0; i < nd; ++i) {
      fd.push_back({"x", static_cast<ObjectClass>(cls(rng) % 2), cr + spread(rng), ca + 0.02 * spread(rng), conf(rng), -1, -1});
    }
    for (double thr : ols_thresholds()) {
      const MatchResult a = match_frame(fd, fg, thr, kappa);
      const MatchResult b = testkit::reference_match(fd, fg, thr, kappa);
      disagreements += a.tp != b.tp || a.fp != b.fp || a.fn != b.fn || a.assignment != b.assignment;
    }
  }
  o.require(disagreements == 0, "reference matcher agreement");
  o.detail << "perfect mAP " << perfect.map << ", AR with one miss " << missing.mar << " (k=" << k
           << "), jitter OLS " << std::setprecision(4) << expected << ", " << disagreements
           << " matcher disagreements over 100 frames";
}

void momentum_update_cases(Outcome& o) {
  std::mt19937_64 rng(3);
  const std::vector<int> widths{5, 4, 3};
  const std::vector<Activation> acts{Activation::relu, Activation::identity};
  const MlpParams k = MlpParams::random(widths, acts, rng), q = MlpParams::random(widths, acts, rng);
  o.require(momentum_update(k, q, 0.0) == q, "m = 0 copies theta_q");
  o.require(momentum_update(q, q, 0.37) == q, "fixed point");
  const MlpParams a({DenseLayer<double>{Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::VectorXd::Zero(1), Activation::identity}});
  const MlpParams b({DenseLayer<double>{Eigen::MatrixXd::Constant(1, 1, 4.0), Eigen::VectorXd::Zero(1), Activation::identity}});
  o.require(momentum_update(a, b, 0.5).layers()[0].weight(0, 0) == 3.0, "midpoint");
  o.require(momentum_update(k, q, 0.9).same_shape(k), "shape preserved");
  o.detail << "copy, fixed point, midpoint and shape cases";
}

SemanticObject wall(double x, const std::string& cls) {
  const Eigen::Vector3d a(x, -20, -20), b(x, 20, -20), c(x, 20, 20), d(x, -20, 20);
  return {"wall", cls, 2, {Triangle{a, b, c}, Triangle{a, c, d}}, {}};
}

void raycasting(Outcome& o) {
  const CameraIntrinsics cam{65, 33, 120.0, 40.0};
  const int cv = cam.height / 2, cu = cam.width / 2;
  CityModel near_model;
  near_model.objects = {wall(10.0, "building")};
  const Sdm near = raycast_sdm(near_model, SensorPose{}, cam);
  o.require(near.mask(cv, cu) && std::abs(near.depth(cv, cu) - 10.0) <= 1e-6, "10 m depth");
  o.require(near.class_names == std::vector<std::string>{"building"} && near.semantic[0](cv, cu) == 1.0, "class");

  CityModel far_model;
  far_model.objects = {wall(40.0, "building")};
  const Sdm far = raycast_sdm(far_model, SensorPose{}, cam);
  o.require(!far.mask.any(), "40 m wall masked");

  const CityModel street = load_city_model(testkit::source_path("data/street.gml"));
  const SensorPose pose{Eigen::Vector3d(4, -1.5, 1.0), 1.1, 0.1};
  const CameraIntrinsics small{64, 32, 120.0, 40.0};
  const Sdm base = raycast_sdm(street, pose, small);
  double worst = 0.0;
  bool masks_equal = true;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> yaw(-kPi, kPi), shift(-500.0, 500.0);
  for (int k = 0; k < 3; ++k) {
    const Eigen::Matrix3d R = Eigen::AngleAxisd(yaw(rng), Eigen::Vector3d::UnitZ()).toRotationMatrix();
    const Eigen::Vector3d t(shift(rng), shift(rng), 0.1 * shift(rng));
    CityModel moved = street;
    for (auto& obj : moved.objects) {
      for (auto& tri : obj.mesh) {
        for (auto& v : tri) v = R * v + t;
      }
    }
    const double dh = std::atan2(R(1, 0), R(0, 0));
    const Sdm m = raycast_sdm(moved, {R * pose.position + t, pose.heading + dh, pose.mount_offset}, small);
    masks_equal = masks_equal && m.mask == base.mask;
    worst = std::max(worst, (m.depth - base.depth).cwiseAbs().maxCoeff());
  }
  o.require(masks_equal && worst <= 1e-6, "rigid-transform invariance");
  o.detail << "centre depth " << std::setprecision(9) << near.depth(cv, cu) << " m, far wall masked " << !far.mask.any()
           << ", invariance error " << worst << " m";
}

struct PipelineRun {
  bool done = false;
  PipelineReport report;
  ExperimentConfig cfg;
  double seconds = 0.0;
  std::string error;
};

PipelineRun& pipeline() {
  static PipelineRun run = [] {
    PipelineRun r;
    try {
      r.cfg = load_experiment_config(testkit::source_path("configs/experiment.default.json"));
      const auto t0 = std::chrono::steady_clock::now();
      r.report = run_pipeline(r.cfg, fs::current_path() / "acceptance_run",
                              [](const std::string& msg) { std::cerr << msg << "\n"; });
      r.seconds = seconds_since(t0);
      r.done = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  }();
  return run;
}

void end_to_end(Outcome& o) {
  const PipelineRun& run = pipeline();
  if (!run.done) {
    o.require(false, "pipeline error: " + run.error);
    return;
  }
  const auto& cfg = run.cfg;
  o.require(cfg.n_frames >= 400, "frames >= 400");
  o.require(cfg.on_lane_fraction >= 0.8, "on_lane_fraction >= 0.8");
  o.require(run.report.seeds.size() == 3, "three seeds");
  double worst_reduction = 1.0, worst_map_without = 1.0;
  for (const auto& s : run.report.seeds) {
    worst_reduction = std::min({worst_reduction, 1.0 - s.final_loss_with / s.initial_loss_with,
                                1.0 - s.final_loss_without / s.initial_loss_without});
    worst_map_without = std::min(worst_map_without, s.without_sdm.map);
  }
  o.require(worst_reduction >= 0.5, "loss reduction >= 50%");
  o.require(worst_map_without >= 0.5, "no-SDM mAP >= 0.5");
  o.require(run.report.median_map_with >= run.report.median_map_without, "median with >= median without");
  o.require(run.seconds < 600.0, "runtime < 10 min");
  o.detail << std::setprecision(4) << cfg.n_frames << " frames, on-lane " << cfg.on_lane_fraction
           << ", min loss reduction " << 100 * worst_reduction << "%, min no-SDM mAP " << worst_map_without
           << ", median mAP with " << run.report.median_map_with << " vs without " << run.report.median_map_without
           << " (gap " << std::showpos << run.report.median_map_with - run.report.median_map_without << std::noshowpos
           << "), " << run.seconds << " s";
}

void pretext_sanity(Outcome& o) {
  const PipelineRun& run = pipeline();
  if (!run.done) {
    o.require(false, "pipeline error: " + run.error);
    return;
  }
  int passing = 0;
  o.detail << std::setprecision(4);
  for (const auto& s : run.report.seeds) {
    const double margin = s.pretext.positive_mean - s.pretext.mismatched_mean;
    passing += margin > 0.0;
    o.detail << "seed " << s.seed << " margin " << margin << "; ";
  }
  o.require(run.report.seeds.size() == 3 && passing == 3, "positive margin on every seed");
}

void round_trip_io(Outcome& o) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-50.0, 50.0), unit(0.0, 1.0);
  std::uniform_int_distribution<int> small(1, 6);
  WaveformConfig wf;
  wf.n_chirps_per_frame = 2;
  wf.samples_per_chirp = 32;
  int failures = 0;
  for (int k = 0; k < 20; ++k) {
    // RDC1: write, read, write again; bytes must match.
    RadarCube cube(wf);
    for (Eigen::Index i = 0; i < cube.samples().size(); ++i) cube.samples().data()[i] = {u(rng), u(rng)};
    std::stringstream a, b;
    write_rdc1(a, cube);
    write_rdc1(b, read_rdc1(a, wf));
    failures += a.str() != b.str();

    // FMAP
    MapStack maps;
    const int rows = small(rng), cols = small(rng);
    for (int c = 0; c < small(rng); ++c) maps.push_back(testkit::random_matrix(rows, cols, rng, -5.0, 5.0));
    std::stringstream fa, fb;
    write_fmap(fa, maps);
    write_fmap(fb, read_fmap(fa));
    failures += fa.str() != fb.str();

    // JSON lines
    std::vector<Detection> dets;
    std::vector<GtAnnotation> gts;
    for (int n = 0; n < small(rng); ++n) {
      const auto c = static_cast<ObjectClass>(n % 3);
      gts.push_back({"frame_" + std::to_string(k), c, 20.0 * unit(rng), unit(rng) - 0.5});
      dets.push_back({"frame_" + std::to_string(k), c, 20.0 * unit(rng), unit(rng) - 0.5, unit(rng), -1, -1});
    }
    std::stringstream ja, da;
    write_annotations(ja, gts);
    write_detections(da, dets);
    const auto gts_back = read_annotations(ja);
    const auto dets_back = read_detections(da);
    for (std::size_t n = 0; n < gts.size(); ++n) {
      failures += gts_back[n].frame != gts[n].frame || gts_back[n].class_label != gts[n].class_label ||
                  gts_back[n].range != gts[n].range || std::abs(gts_back[n].azimuth - gts[n].azimuth) > 1e-15;
      failures += dets_back[n].confidence != dets[n].confidence || dets_back[n].range != dets[n].range ||
                  std::abs(dets_back[n].azimuth - dets[n].azimuth) > 1e-15;
    }

    // gml_lite
    CityModel city;
    for (int n = 0; n < small(rng); ++n) {
      SemanticObject obj{"obj_" + std::to_string(n), n % 2 ? "sidewalk" : "building", n % 4, {}, {}};
      for (int t = 0; t < small(rng); ++t) {
        obj.mesh.push_back({Eigen::Vector3d(u(rng), u(rng), u(rng)), Eigen::Vector3d(u(rng), u(rng), u(rng)),
                            Eigen::Vector3d(u(rng), u(rng), u(rng))});
      }
      city.objects.push_back(obj);
    }
    const CityModel back = parse_city_model(write_city_model(city, CityFormat::gml_lite), CityFormat::gml_lite);
    bool same = back.objects.size() == city.objects.size();
    for (std::size_t n = 0; same && n < city.objects.size(); ++n) {
      same = back.objects[n].id == city.objects[n].id && back.objects[n].class_label == city.objects[n].class_label &&
             back.objects[n].lod == city.objects[n].lod && back.objects[n].mesh == city.objects[n].mesh;
    }
    failures += !same;
  }
  o.detail << "20 artefacts per format, " << failures << " mismatches";
  o.require(failures == 0, "round trip");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, Check>> criteria = {
      {"waveform constants", waveform_constants},
      {"gradient suite", gradient_suite},
      {"FFT localisation", fft_localization},
      {"OLS exactness", ols_exactness},
      {"L-NMS contract", lnms_contract},
      {"evaluator oracle", evaluator_oracle},
      {"momentum update", momentum_update_cases},
      {"raycasting", raycasting},
      {"end-to-end trend", end_to_end},
      {"pretext sanity", pretext_sanity},
      {"round-trip I/O", round_trip_io},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failed += !o.pass;
    std::cout << "[PRIMARY] criterion " << k + 1 << " (" << criteria[k].first << "): " << (o.pass ? "PASS" : "FAIL")
              << " - " << o.detail.str() << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
