#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cityradar/citymodel.hpp"
#include "cityradar/errors.hpp"
#include "cityradar/nn.hpp"
#include "cityradar/object_class.hpp"
#include "cityradar/ra_map.hpp"

namespace cityradar {

inline constexpr double kConfEpsilon = 1e-7;

/// Per-class OLS error tolerance, relative to object range.
struct KappaTable {
  std::array<double, kNumClasses> kappa{0.01, 0.015, 0.02};

  double operator[](ObjectClass c) const { return kappa[index_of(c)]; }
  void validate() const;
};

struct GtAnnotation {
  std::string frame;
  ObjectClass class_label = ObjectClass::car;
  double range = 0.0;    // m
  double azimuth = 0.0;  // rad
};

using MapStack = std::vector<Eigen::MatrixXd>;

/// One channel per ObjectClass, rows = range bins, cols = azimuth bins.
struct ConfMaps {
  MapStack channels;

  static ConfMaps zeros(Eigen::Index rows, Eigen::Index cols) {
    return {MapStack(kNumClasses, Eigen::MatrixXd::Zero(rows, cols))};
  }
  Eigen::Index rows() const { return channels.empty() ? 0 : channels[0].rows(); }
  Eigen::Index cols() const { return channels.empty() ? 0 : channels[0].cols(); }
  const Eigen::MatrixXd& operator[](ObjectClass c) const { return channels[index_of(c)]; }
};

/// Gaussian bump per object (peak 1 at its bin, sigma in bins =
/// kappa * range / range_resolution * sigma_scale), combined by maximum.
ConfMaps gt_confmaps(std::span<const GtAnnotation> annotations, const Eigen::VectorXd& range_axis,
                     const Eigen::VectorXd& azimuth_axis, const KappaTable& kappa, double sigma_scale = 1.0);

template <class Scalar>
struct BceResult {
  Scalar loss;
  std::vector<MatrixX<Scalar>> grad;
};

/// Summed binary cross-entropy with predictions clamped to [eps, 1 - eps].
template <class Scalar>
BceResult<Scalar> bce_loss_and_grad(const std::vector<MatrixX<Scalar>>& pred, const std::vector<MatrixX<Scalar>>& gt) {
  if (pred.size() != gt.size()) throw InvalidArgument("bce: channel count mismatch");
  const Scalar eps = static_cast<Scalar>(kConfEpsilon);
  BceResult<Scalar> r{Scalar(0), {}};
  for (std::size_t c = 0; c < pred.size(); ++c) {
    if (pred[c].rows() != gt[c].rows() || pred[c].cols() != gt[c].cols()) {
      throw InvalidArgument("bce: shape mismatch in channel " + std::to_string(c));
    }
    const auto p = pred[c].array().max(eps).min(Scalar(1) - eps);
    const auto& d = gt[c].array();
    r.loss -= (d * p.log() + (Scalar(1) - d) * (Scalar(1) - p).log()).sum();
    r.grad.push_back(-(d / p - (Scalar(1) - d) / (Scalar(1) - p)).matrix());
  }
  return r;
}

BceResult<double> bce_loss_and_grad(const ConfMaps& pred, const ConfMaps& gt);

/// SDM input channels (semantic one-hots, then depth / max_range) average
/// pooled to rows x cols. Masked pixels are zero in every channel.
MapStack sdm_pool(const Sdm& sdm, int rows, int cols);

/// Pooling followed by a learned 1x1 linear map (no bias).
struct SdmFeatureExtractor {
  Eigen::MatrixXd weight;  // out_channels x (n_semantic + 1)

  static SdmFeatureExtractor random(int out_channels, int in_channels, std::uint64_t seed);
  MapStack operator()(const Sdm& sdm, int rows, int cols) const;
};

enum class FusionMode { add, concat };

/// add: element-wise sum of equal-shape stacks; concat: radar channels first.
MapStack fuse(const MapStack& radar_feat, const MapStack& sdm_feat, FusionMode mode);

struct DetectorConfig {
  bool use_sdm = false;
  FusionMode fusion = FusionMode::concat;
  int radar_channels = 24;
  int sdm_channels = 8;
  int hidden = 16;
  double learning_rate = 1e-3;  // initial rate, cosine-annealed over the epochs
  int epochs = 30;
  bool freeze_encoder = false;
  double prior = 0.01;  // initial output probability
  double sigma_scale = 1.0;
  int encoder_side = 32;
  std::uint64_t seed = 0;
  KappaTable kappa;

  void validate() const;
};

inline constexpr int kLocalTaps = 9;  // 3x3 neighbourhood

/// Transferred radar encoder plus a per-pixel decoder. Radar features at a
/// pixel come from its 3x3 neighbourhood and the encoder's global embedding;
/// optional SDM features are fused before the decoder.
template <class Scalar>
struct DetectorModel {
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  DetectorConfig config;
  std::vector<std::string> sdm_classes;
  Mlp<Scalar> encoder;
  Matrix local_weight;   // radar_channels x 9
  Matrix global_weight;  // radar_channels x embed
  Vector radar_bias;
  Matrix sdm_weight;     // sdm_out x sdm_in, empty without SDM
  Matrix hidden_weight;  // hidden x fused
  Vector hidden_bias;
  Matrix out_weight;     // 3 x hidden
  Vector out_bias;

  int sdm_out_channels() const { return config.fusion == FusionMode::add ? config.radar_channels : config.sdm_channels; }
  int fused_channels() const {
    return config.use_sdm && config.fusion == FusionMode::concat ? config.radar_channels + config.sdm_channels
                                                                 : config.radar_channels;
  }

  template <class F>
  void for_each_tensor(F&& f) {
    f(local_weight);
    f(global_weight);
    f(radar_bias);
    f(sdm_weight);
    f(hidden_weight);
    f(hidden_bias);
    f(out_weight);
    f(out_bias);
  }

  DetectorModel zeros_like() const {
    DetectorModel z = *this;
    z.encoder = encoder.zeros_like();
    z.for_each_tensor([](auto& t) { t.setZero(); });
    return z;
  }

  DetectorModel& axpy(Scalar alpha, const DetectorModel& o) {
    encoder.axpy(alpha, o.encoder);
    local_weight += alpha * o.local_weight;
    global_weight += alpha * o.global_weight;
    radar_bias += alpha * o.radar_bias;
    sdm_weight += alpha * o.sdm_weight;
    hidden_weight += alpha * o.hidden_weight;
    hidden_bias += alpha * o.hidden_bias;
    out_weight += alpha * o.out_weight;
    out_bias += alpha * o.out_bias;
    return *this;
  }

  Vector flatten() const {
    DetectorModel copy = *this;
    std::vector<Scalar> v;
    const Vector enc = encoder.flatten();
    v.insert(v.end(), enc.data(), enc.data() + enc.size());
    copy.for_each_tensor([&](auto& t) { v.insert(v.end(), t.data(), t.data() + t.size()); });
    return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  void assign(const Vector& v) {
    Eigen::Index o = encoder.parameter_count();
    encoder.assign(v.head(o));
    for_each_tensor([&](auto& t) {
      std::copy(v.data() + o, v.data() + o + t.size(), t.data());
      o += t.size();
    });
    if (o != v.size()) throw InvalidArgument("detector: parameter vector size mismatch");
  }

  template <class T>
  DetectorModel<T> cast() const {
    DetectorModel<T> m;
    m.config = config;
    m.sdm_classes = sdm_classes;
    m.encoder = encoder.template cast<T>();
    m.local_weight = local_weight.template cast<T>();
    m.global_weight = global_weight.template cast<T>();
    m.radar_bias = radar_bias.template cast<T>();
    m.sdm_weight = sdm_weight.template cast<T>();
    m.hidden_weight = hidden_weight.template cast<T>();
    m.hidden_bias = hidden_bias.template cast<T>();
    m.out_weight = out_weight.template cast<T>();
    m.out_bias = out_bias.template cast<T>();
    return m;
  }

  bool all_finite() const {
    DetectorModel copy = *this;
    bool ok = encoder.all_finite();
    copy.for_each_tensor([&](auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  bool operator==(const DetectorModel& o) const { return flatten() == o.flatten(); }
};

/// Network inputs for one frame.
template <class Scalar>
struct DetectorInput {
  Eigen::Index rows = 0, cols = 0;
  MatrixX<Scalar> local;    // 9 x pixels, column-major pixel order
  VectorX<Scalar> encoder;  // pooled RA map
  MatrixX<Scalar> sdm;      // sdm_in x pixels, empty without SDM
};

/// `ra` should already be normalised; `sdm` may be null.
template <class Scalar>
DetectorInput<Scalar> make_detector_input(const Eigen::MatrixXd& ra, const Sdm* sdm, int encoder_side);

/// Initialises a model around a transferred encoder.
template <class Scalar>
DetectorModel<Scalar> init_detector(const MlpParams& encoder, const DetectorConfig& config,
                                    std::vector<std::string> sdm_classes);

/// Probabilities (3 x pixels), clamped to [eps, 1 - eps].
template <class Scalar>
MatrixX<Scalar> detector_forward(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in);

template <class Scalar>
struct DetectorGradient {
  Scalar loss;
  DetectorModel<Scalar> grad;
};

/// Summed BCE against `target` (3 x pixels) and its full parameter gradient.
template <class Scalar>
DetectorGradient<Scalar> detector_loss_and_grad(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in,
                                                const MatrixX<Scalar>& target);

/// ConfMaps flattened to 3 x pixels (column-major pixel order).
template <class Scalar>
MatrixX<Scalar> flatten_confmaps(const ConfMaps& maps);

struct DetectionFrame {
  RAMap ra;                          // normalised
  std::shared_ptr<const Sdm> sdm;    // RA-aligned or camera-view; may be null
  std::vector<GtAnnotation> annotations;
};

template <class Scalar>
struct DetectorTrainResult {
  DetectorModel<Scalar> model;
  std::vector<double> history;  // mean per-frame loss of each epoch
  double initial_loss = 0.0;    // mean per-frame loss before the first update
  double final_loss = 0.0;      // mean per-frame loss after training
};

template <class Scalar>
DetectorTrainResult<Scalar> detect_train(std::span<const DetectionFrame> dataset, const MlpParams& encoder,
                                         const DetectorConfig& config);

template <class Scalar>
ConfMaps infer_confmaps(const DetectorModel<Scalar>& model, const RAMap& ra, const Sdm* sdm);

}  // namespace cityradar
