#include "cityradar/detect.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "cityradar/errors.hpp"

namespace cityradar {

void KappaTable::validate() const {
  for (double k : kappa) {
    if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("kappa values must be positive");
  }
}

ConfMaps gt_confmaps(std::span<const GtAnnotation> annotations, const Eigen::VectorXd& range_axis,
                     const Eigen::VectorXd& azimuth_axis, const KappaTable& kappa, double sigma_scale) {
  kappa.validate();
  if (range_axis.size() < 2 || azimuth_axis.size() < 2) throw InvalidArgument("gt_confmaps: axes need >= 2 bins");
  if (!(sigma_scale > 0.0)) throw InvalidArgument("gt_confmaps: sigma_scale must be positive");
  const Eigen::Index R = range_axis.size(), A = azimuth_axis.size();
  const double dr = range_axis[1] - range_axis[0];
  const double az_lo = azimuth_axis[0] - 0.5 * (azimuth_axis[1] - azimuth_axis[0]);
  const double az_hi = azimuth_axis[A - 1] + 0.5 * (azimuth_axis[A - 1] - azimuth_axis[A - 2]);
  ConfMaps maps = ConfMaps::zeros(R, A);

  for (std::size_t k = 0; k < annotations.size(); ++k) {
    const GtAnnotation& a = annotations[k];
    if (!(a.range > 0.0) || a.range > range_axis[R - 1] + 0.5 * dr || a.azimuth < az_lo || a.azimuth > az_hi) {
      std::ostringstream os;
      os << "gt_confmaps: frame '" << a.frame << "' object #" << k << " (" << to_string(a.class_label) << ", range "
         << a.range << " m) lies outside the map";
      throw InvalidArgument(os.str());
    }
    const int ci = nearest_index(range_axis, a.range);
    const int cj = nearest_index(azimuth_axis, a.azimuth);
    const double sigma = kappa[a.class_label] * a.range / dr * sigma_scale;
    const int radius = static_cast<int>(std::ceil(4.0 * sigma)) + 1;
    Eigen::MatrixXd& ch = maps.channels[index_of(a.class_label)];
    for (int i = std::max(0, ci - radius); i <= std::min<int>(R - 1, ci + radius); ++i) {
      for (int j = std::max(0, cj - radius); j <= std::min<int>(A - 1, cj + radius); ++j) {
        const double d2 = double(i - ci) * (i - ci) + double(j - cj) * (j - cj);
        const double v = d2 == 0.0 ? 1.0 : std::exp(-d2 / (2.0 * sigma * sigma));
        ch(i, j) = std::max(ch(i, j), v);
      }
    }
  }
  return maps;
}

BceResult<double> bce_loss_and_grad(const ConfMaps& pred, const ConfMaps& gt) {
  return bce_loss_and_grad<double>(pred.channels, gt.channels);
}

MapStack sdm_pool(const Sdm& sdm, int rows, int cols) {
  MapStack out;
  for (const auto& ch : sdm.semantic) out.push_back(pool_average(ch, rows, cols));
  const Eigen::MatrixXd depth = sdm.mask.select(sdm.depth / sdm.max_range, 0.0);
  out.push_back(pool_average(depth, rows, cols));
  return out;
}

SdmFeatureExtractor SdmFeatureExtractor::random(int out_channels, int in_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in_channels)));
  SdmFeatureExtractor f;
  f.weight.resize(out_channels, in_channels);
  for (Eigen::Index j = 0; j < f.weight.cols(); ++j) {
    for (Eigen::Index i = 0; i < f.weight.rows(); ++i) f.weight(i, j) = dist(rng);
  }
  return f;
}

MapStack SdmFeatureExtractor::operator()(const Sdm& sdm, int rows, int cols) const {
  const MapStack pooled = sdm_pool(sdm, rows, cols);
  if (static_cast<Eigen::Index>(pooled.size()) != weight.cols()) {
    throw InvalidArgument("sdm_features: extractor expects " + std::to_string(weight.cols()) + " input channels");
  }
  MapStack out(weight.rows(), Eigen::MatrixXd::Zero(rows, cols));
  for (Eigen::Index o = 0; o < weight.rows(); ++o) {
    for (std::size_t c = 0; c < pooled.size(); ++c) out[o] += weight(o, static_cast<Eigen::Index>(c)) * pooled[c];
  }
  return out;
}

MapStack fuse(const MapStack& radar_feat, const MapStack& sdm_feat, FusionMode mode) {
  auto same_spatial = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
  };
  if (mode == FusionMode::add) {
    if (radar_feat.size() != sdm_feat.size()) throw InvalidArgument("fuse(add): channel counts differ");
    MapStack out = radar_feat;
    for (std::size_t c = 0; c < out.size(); ++c) {
      if (!same_spatial(out[c], sdm_feat[c])) throw InvalidArgument("fuse(add): spatial shapes differ");
      out[c] += sdm_feat[c];
    }
    return out;
  }
  if (!radar_feat.empty() && !sdm_feat.empty() && !same_spatial(radar_feat[0], sdm_feat[0])) {
    throw InvalidArgument("fuse(concat): spatial shapes differ");
  }
  MapStack out = radar_feat;
  out.insert(out.end(), sdm_feat.begin(), sdm_feat.end());
  for (const auto& c : out) {
    if (!same_spatial(c, out[0])) throw InvalidArgument("fuse(concat): spatial shapes differ");
  }
  return out;
}

void DetectorConfig::validate() const {
  if (radar_channels <= 0 || hidden <= 0 || encoder_side <= 0) throw InvalidArgument("detector: sizes must be positive");
  if (use_sdm && fusion == FusionMode::concat && sdm_channels <= 0) {
    throw InvalidArgument("detector: sdm_channels must be positive");
  }
  if (!(learning_rate > 0.0)) throw InvalidArgument("detector: learning_rate must be positive");
  if (epochs < 0) throw InvalidArgument("detector: epochs must be non-negative");
  if (!(prior > 0.0 && prior < 1.0)) throw InvalidArgument("detector: prior must lie in (0, 1)");
  if (!(sigma_scale > 0.0)) throw InvalidArgument("detector: sigma_scale must be positive");
  kappa.validate();
}

template <class Scalar>
DetectorInput<Scalar> make_detector_input(const Eigen::MatrixXd& ra, const Sdm* sdm, int encoder_side) {
  DetectorInput<Scalar> in;
  in.rows = ra.rows();
  in.cols = ra.cols();
  const Eigen::Index H = in.rows, W = in.cols;
  in.local = MatrixX<Scalar>::Zero(kLocalTaps, H * W);
  for (Eigen::Index j = 0; j < W; ++j) {
    for (Eigen::Index i = 0; i < H; ++i) {
      const Eigen::Index p = i + j * H;
      int t = 0;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj, ++t) {
          const Eigen::Index ii = i + di, jj = j + dj;
          if (ii >= 0 && jj >= 0 && ii < H && jj < W) in.local(t, p) = static_cast<Scalar>(ra(ii, jj));
        }
      }
    }
  }
  in.encoder = encoder_input(ra, encoder_side).cast<Scalar>();
  if (sdm) {
    const MapStack pooled = sdm_pool(*sdm, static_cast<int>(H), static_cast<int>(W));
    in.sdm.resize(static_cast<Eigen::Index>(pooled.size()), H * W);
    for (std::size_t c = 0; c < pooled.size(); ++c) {
      in.sdm.row(static_cast<Eigen::Index>(c)) = pooled[c].reshaped().transpose().cast<Scalar>();
    }
  }
  return in;
}

namespace {

template <class Scalar>
MatrixX<Scalar> random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  MatrixX<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(dist(rng));
  }
  return m;
}

template <class Scalar>
struct ForwardCache {
  typename Mlp<Scalar>::Tape encoder_tape;
  VectorX<Scalar> embedding;
  MatrixX<Scalar> radar_pre;
  MatrixX<Scalar> fused;
  MatrixX<Scalar> hidden_pre;
  MatrixX<Scalar> hidden;
  MatrixX<Scalar> prob;  // unclamped sigmoid
};

template <class Scalar>
void check_input(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in) {
  if (model.config.use_sdm && in.sdm.size() == 0) throw InvalidArgument("detector: model expects an SDM input");
  if (!model.config.use_sdm && in.sdm.size() != 0) throw InvalidArgument("detector: model was built without SDM");
  if (model.config.use_sdm && in.sdm.rows() != model.sdm_weight.cols()) {
    throw InvalidArgument("detector: SDM has " + std::to_string(in.sdm.rows()) + " channels, model expects " +
                          std::to_string(model.sdm_weight.cols()));
  }
}

template <class Scalar>
void run_forward(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in, ForwardCache<Scalar>& c) {
  check_input(model, in);
  c.embedding = model.encoder.forward(in.encoder, c.encoder_tape);
  const VectorX<Scalar> global = model.global_weight * c.embedding + model.radar_bias;
  c.radar_pre.noalias() = model.local_weight * in.local;
  c.radar_pre.colwise() += global;
  const MatrixX<Scalar> radar = c.radar_pre.cwiseMax(Scalar(0));
  if (!model.config.use_sdm) {
    c.fused = radar;
  } else if (model.config.fusion == FusionMode::add) {
    c.fused = radar;
    c.fused.noalias() += model.sdm_weight * in.sdm;
  } else {
    c.fused.resize(model.fused_channels(), radar.cols());
    c.fused.topRows(radar.rows()) = radar;
    c.fused.bottomRows(model.sdm_weight.rows()).noalias() = model.sdm_weight * in.sdm;
  }
  c.hidden_pre.noalias() = model.hidden_weight * c.fused;
  c.hidden_pre.colwise() += model.hidden_bias;
  c.hidden = c.hidden_pre.cwiseMax(Scalar(0));
  MatrixX<Scalar> logits = model.out_weight * c.hidden;
  logits.colwise() += model.out_bias;
  c.prob = (Scalar(1) + (-logits.array()).exp()).inverse().matrix();
}

template <class Scalar>
Scalar clamped_bce(const MatrixX<Scalar>& prob, const MatrixX<Scalar>& target) {
  const Scalar eps = static_cast<Scalar>(kConfEpsilon);
  const auto p = prob.array().max(eps).min(Scalar(1) - eps);
  const auto& d = target.array();
  return -(d * p.log() + (Scalar(1) - d) * (Scalar(1) - p).log()).sum();
}

}  // namespace

template <class Scalar>
DetectorModel<Scalar> init_detector(const MlpParams& encoder, const DetectorConfig& config,
                                    std::vector<std::string> sdm_classes) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  DetectorModel<Scalar> m;
  m.config = config;
  m.encoder = encoder.cast<Scalar>();
  const Eigen::Index embed = m.encoder.output_dim();
  const int rc = config.radar_channels;
  m.local_weight = random_matrix<Scalar>(rc, kLocalTaps, std::sqrt(2.0 / kLocalTaps), rng);
  m.global_weight = random_matrix<Scalar>(rc, embed, std::sqrt(1.0 / std::max<Eigen::Index>(1, embed)), rng);
  m.radar_bias = VectorX<Scalar>::Zero(rc);
  if (config.use_sdm) {
    const Eigen::Index sdm_in = static_cast<Eigen::Index>(sdm_classes.size()) + 1;
    m.sdm_weight = random_matrix<Scalar>(m.sdm_out_channels(), sdm_in, std::sqrt(1.0 / sdm_in), rng);
    m.sdm_classes = std::move(sdm_classes);
  } else {
    m.sdm_weight.resize(0, 0);
  }
  m.hidden_weight = random_matrix<Scalar>(config.hidden, m.fused_channels(), std::sqrt(2.0 / m.fused_channels()), rng);
  m.hidden_bias = VectorX<Scalar>::Zero(config.hidden);
  m.out_weight = random_matrix<Scalar>(kNumClasses, config.hidden, std::sqrt(1.0 / config.hidden), rng);
  m.out_bias = VectorX<Scalar>::Constant(kNumClasses, static_cast<Scalar>(std::log(config.prior / (1.0 - config.prior))));
  return m;
}

template <class Scalar>
MatrixX<Scalar> detector_forward(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in) {
  ForwardCache<Scalar> c;
  run_forward(model, in, c);
  const Scalar eps = static_cast<Scalar>(kConfEpsilon);
  return c.prob.cwiseMax(eps).cwiseMin(Scalar(1) - eps);
}

template <class Scalar>
DetectorGradient<Scalar> detector_loss_and_grad(const DetectorModel<Scalar>& model, const DetectorInput<Scalar>& in,
                                                const MatrixX<Scalar>& target) {
  ForwardCache<Scalar> c;
  run_forward(model, in, c);
  if (target.rows() != c.prob.rows() || target.cols() != c.prob.cols()) {
    throw InvalidArgument("detector: target shape mismatch");
  }
  DetectorGradient<Scalar> out{clamped_bce(c.prob, target), model.zeros_like()};
  DetectorModel<Scalar>& g = out.grad;
  const Scalar eps = static_cast<Scalar>(kConfEpsilon);

  // d loss / d logit = p - D inside the clamp, zero where the clamp is active.
  const MatrixX<Scalar> d_logits =
      ((c.prob.array() > eps) && (c.prob.array() < Scalar(1) - eps)).select(c.prob - target, Scalar(0));
  g.out_weight.noalias() = d_logits * c.hidden.transpose();
  g.out_bias = d_logits.rowwise().sum();
  MatrixX<Scalar> d_hidden = model.out_weight.transpose() * d_logits;
  d_hidden = (c.hidden_pre.array() > Scalar(0)).select(d_hidden, Scalar(0));
  g.hidden_weight.noalias() = d_hidden * c.fused.transpose();
  g.hidden_bias = d_hidden.rowwise().sum();
  const MatrixX<Scalar> d_fused = model.hidden_weight.transpose() * d_hidden;

  const Eigen::Index rc = model.config.radar_channels;
  MatrixX<Scalar> d_radar = d_fused.topRows(rc);
  if (model.config.use_sdm) {
    const auto d_sdm = model.config.fusion == FusionMode::add ? d_fused.topRows(rc) : d_fused.bottomRows(model.sdm_weight.rows());
    g.sdm_weight.noalias() = d_sdm * in.sdm.transpose();
  }
  d_radar = (c.radar_pre.array() > Scalar(0)).select(d_radar, Scalar(0));
  g.local_weight.noalias() = d_radar * in.local.transpose();
  const VectorX<Scalar> d_global = d_radar.rowwise().sum();
  g.radar_bias = d_global;
  g.global_weight.noalias() = d_global * c.embedding.transpose();
  if (!model.config.freeze_encoder) {
    const MatrixX<Scalar> d_embed = model.global_weight.transpose() * d_global;
    model.encoder.backward(c.encoder_tape, d_embed, g.encoder);
  }
  return out;
}

template <class Scalar>
MatrixX<Scalar> flatten_confmaps(const ConfMaps& maps) {
  const Eigen::Index P = maps.rows() * maps.cols();
  MatrixX<Scalar> out(static_cast<Eigen::Index>(maps.channels.size()), P);
  for (std::size_t c = 0; c < maps.channels.size(); ++c) {
    out.row(static_cast<Eigen::Index>(c)) = maps.channels[c].reshaped().transpose().template cast<Scalar>();
  }
  return out;
}

template <class Scalar>
DetectorTrainResult<Scalar> detect_train(std::span<const DetectionFrame> dataset, const MlpParams& encoder,
                                         const DetectorConfig& config) {
  config.validate();
  if (dataset.empty()) throw InvalidArgument("detect_train: empty dataset");
  std::vector<std::string> classes;
  if (config.use_sdm) {
    for (std::size_t k = 0; k < dataset.size(); ++k) {
      if (!dataset[k].sdm) throw InvalidArgument("detect_train: frame " + std::to_string(k) + " has no SDM");
      if (k == 0) classes = dataset[k].sdm->class_names;
      else if (dataset[k].sdm->class_names != classes) throw InvalidArgument("detect_train: SDM vocabularies differ");
    }
  }

  DetectorTrainResult<Scalar> result;
  DetectorModel<Scalar>& model = result.model;
  model = init_detector<Scalar>(encoder, config, classes);

  // SDM pooling is shared between frames that reference the same map.
  std::map<const Sdm*, MatrixX<Scalar>> sdm_cache;
  auto input_for = [&](const DetectionFrame& f) {
    DetectorInput<Scalar> in = make_detector_input<Scalar>(f.ra.grid, nullptr, config.encoder_side);
    if (config.use_sdm) {
      auto it = sdm_cache.find(f.sdm.get());
      if (it == sdm_cache.end()) {
        it = sdm_cache.emplace(f.sdm.get(),
                               make_detector_input<Scalar>(f.ra.grid, f.sdm.get(), config.encoder_side).sdm).first;
      }
      in.sdm = it->second;
    }
    return in;
  };
  auto target_for = [&](const DetectionFrame& f) {
    return flatten_confmaps<Scalar>(
        gt_confmaps(f.annotations, f.ra.range_axis, f.ra.azimuth_axis, config.kappa, config.sigma_scale));
  };
  auto mean_loss = [&]() {
    double total = 0.0;
    for (const auto& f : dataset) {
      total += static_cast<double>(clamped_bce<Scalar>(detector_forward(model, input_for(f)), target_for(f)));
    }
    return total / static_cast<double>(dataset.size());
  };

  result.initial_loss = mean_loss();
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Cosine annealing: constant-rate SGD on the summed loss keeps bouncing
    // between minima, so the step shrinks towards zero by the last epoch.
    const double phase = std::numbers::pi * epoch / config.epochs;
    const auto lr = static_cast<Scalar>(config.learning_rate * 0.5 * (1.0 + std::cos(phase)));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t k : order) {
      const DetectionFrame& f = dataset[k];
      auto step = detector_loss_and_grad(model, input_for(f), target_for(f));
      if (!std::isfinite(static_cast<double>(step.loss))) {
        std::ostringstream os;
        os << "detect_train: non-finite loss at epoch " << epoch << ", frame '" << f.ra.frame_id << "'";
        throw NumericError(os.str());
      }
      total += static_cast<double>(step.loss);
      model.axpy(-lr, step.grad);
    }
    result.history.push_back(total / static_cast<double>(dataset.size()));
    if (!model.all_finite()) throw NumericError("detect_train: parameters diverged at epoch " + std::to_string(epoch));
  }
  result.final_loss = mean_loss();
  return result;
}

template <class Scalar>
ConfMaps infer_confmaps(const DetectorModel<Scalar>& model, const RAMap& ra, const Sdm* sdm) {
  if (model.config.use_sdm != (sdm != nullptr)) {
    throw InvalidArgument(model.config.use_sdm ? "infer_confmaps: model requires an SDM"
                                               : "infer_confmaps: model was trained without SDM");
  }
  if (sdm && sdm->class_names != model.sdm_classes) throw InvalidArgument("infer_confmaps: SDM vocabulary mismatch");
  const auto in = make_detector_input<Scalar>(ra.grid, sdm, model.config.encoder_side);
  const MatrixX<Scalar> prob = detector_forward(model, in);
  ConfMaps out;
  for (Eigen::Index c = 0; c < prob.rows(); ++c) {
    out.channels.push_back(prob.row(c).transpose().template cast<double>().reshaped(ra.grid.rows(), ra.grid.cols()));
  }
  return out;
}

#define CITYRADAR_INSTANTIATE_DETECT(S)                                                                         \
  template DetectorInput<S> make_detector_input<S>(const Eigen::MatrixXd&, const Sdm*, int);                   \
  template DetectorModel<S> init_detector<S>(const MlpParams&, const DetectorConfig&, std::vector<std::string>); \
  template MatrixX<S> detector_forward<S>(const DetectorModel<S>&, const DetectorInput<S>&);                     \
  template DetectorGradient<S> detector_loss_and_grad<S>(const DetectorModel<S>&, const DetectorInput<S>&,        \
                                                         const MatrixX<S>&);                                     \
  template MatrixX<S> flatten_confmaps<S>(const ConfMaps&);                                                      \
  template DetectorTrainResult<S> detect_train<S>(std::span<const DetectionFrame>, const MlpParams&,             \
                                                  const DetectorConfig&);                                        \
  template ConfMaps infer_confmaps<S>(const DetectorModel<S>&, const RAMap&, const Sdm*);

CITYRADAR_INSTANTIATE_DETECT(float)
CITYRADAR_INSTANTIATE_DETECT(double)

}  // namespace cityradar
