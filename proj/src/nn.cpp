#include "cityradar/nn.hpp"

#include <algorithm>
#include <array>
#include <numeric>

namespace cityradar {

void SslConfig::validate() const {
  if (!(tau > 0.0)) throw InvalidArgument("ssl: tau must be positive");
  if (!(m >= 0.0 && m < 1.0)) throw InvalidArgument("ssl: momentum must lie in [0, 1)");
  if (queue_capacity <= 0 || embed_dim <= 0 || proj_dim <= 0 || hidden_dim <= 0 || input_side <= 0) {
    throw InvalidArgument("ssl: sizes must be positive");
  }
  if (!(learning_rate > 0.0)) throw InvalidArgument("ssl: learning_rate must be positive");
  if (epochs <= 0 || batch_size <= 0) throw InvalidArgument("ssl: epochs and batch_size must be positive");
  if (batch_size > queue_capacity) throw InvalidArgument("ssl: batch_size must not exceed queue_capacity");
}

Eigen::VectorXd encoder_input(const Eigen::MatrixXd& map, int side) {
  return pool_average(map, side, side).reshaped();
}

namespace {

struct Branch {
  MlpParams encoder;
  MlpParams projection;
};

Branch make_branch(const SslConfig& cfg, std::mt19937_64& rng) {
  const std::array<int, 3> enc_widths{cfg.input_side * cfg.input_side, cfg.hidden_dim, cfg.embed_dim};
  const std::array<Activation, 2> enc_acts{Activation::relu, Activation::relu};
  const std::array<int, 2> proj_widths{cfg.embed_dim, cfg.proj_dim};
  const std::array<Activation, 1> proj_acts{Activation::identity};
  Branch b;
  b.encoder = MlpParams::random(enc_widths, enc_acts, rng);
  b.projection = MlpParams::random(proj_widths, proj_acts, rng);
  return b;
}

Eigen::MatrixXd stack_inputs(std::span<const PretextPair> pairs, std::span<const std::size_t> idx, bool radar,
                             int side) {
  Eigen::MatrixXd x(side * side, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t b = 0; b < idx.size(); ++b) {
    x.col(static_cast<Eigen::Index>(b)) = encoder_input(radar ? pairs[idx[b]].radar : pairs[idx[b]].image, side);
  }
  return x;
}

}  // namespace

PretextResult pretext_train(std::span<const PretextPair> pairs, const SslConfig& cfg) {
  cfg.validate();
  if (pairs.size() < static_cast<std::size_t>(cfg.batch_size)) {
    throw InvalidArgument("pretext_train: need at least batch_size pairs, got " + std::to_string(pairs.size()));
  }
  for (const auto& p : pairs) {
    if (p.radar.size() == 0 || p.image.size() == 0) throw InvalidArgument("pretext_train: empty map in pair");
  }

  std::mt19937_64 rng(cfg.seed);
  Branch query = make_branch(cfg, rng);
  Branch key = query;

  // Queue starts full of random unit vectors.
  NegativeQueue<double> queue(cfg.queue_capacity, cfg.proj_dim);
  {
    std::normal_distribution<double> dist;
    Eigen::MatrixXd init(cfg.proj_dim, cfg.queue_capacity);
    for (Eigen::Index j = 0; j < init.cols(); ++j) {
      for (Eigen::Index i = 0; i < init.rows(); ++i) init(i, j) = dist(rng);
    }
    queue.push(init);
  }

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  PretextResult result;
  MlpParams::Tape enc_tape, proj_tape;
  MlpParams enc_grad, proj_grad;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const auto B = static_cast<Eigen::Index>(idx.size());

      const Eigen::MatrixXd keys =
          key.projection.forward(key.encoder.forward(stack_inputs(pairs, idx, false, cfg.input_side)));
      queue.push(keys);

      const Eigen::MatrixXd feats = query.encoder.forward(stack_inputs(pairs, idx, true, cfg.input_side), enc_tape);
      const Eigen::MatrixXd q = query.projection.forward(feats, proj_tape);
      Eigen::MatrixXd grad(q.rows(), B);
      for (Eigen::Index b = 0; b < B; ++b) {
        const auto r = info_nce_loss_and_grad<double>(q.col(b), queue.size() - B + b, queue, cfg.tau);
        if (!std::isfinite(r.loss)) {
          throw NumericError("pretext_train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                             std::to_string(idx[b]));
        }
        epoch_loss += r.loss;
        grad.col(b) = r.grad / static_cast<double>(B);
      }
      const Eigen::MatrixXd d_feats = query.projection.backward(proj_tape, grad, proj_grad);
      query.encoder.backward(enc_tape, d_feats, enc_grad);
      query.projection.axpy(-cfg.learning_rate, proj_grad);
      query.encoder.axpy(-cfg.learning_rate, enc_grad);

      key.encoder = momentum_update(key.encoder, query.encoder, cfg.m);
      key.projection = momentum_update(key.projection, query.projection, cfg.m);
    }
    result.history.push_back(epoch_loss / static_cast<double>(pairs.size()));
    if (!query.encoder.all_finite() || !query.projection.all_finite()) {
      throw NumericError("pretext_train: parameters diverged at epoch " + std::to_string(epoch));
    }
  }

  result.radar_encoder = std::move(query.encoder);
  result.radar_projection = std::move(query.projection);
  result.image_encoder = std::move(key.encoder);
  result.image_projection = std::move(key.projection);
  return result;
}

Eigen::MatrixXd embed(const MlpParams& encoder, const MlpParams& projection, std::span<const Eigen::MatrixXd> maps,
                      int input_side) {
  Eigen::MatrixXd x(input_side * input_side, static_cast<Eigen::Index>(maps.size()));
  for (std::size_t i = 0; i < maps.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = encoder_input(maps[i], input_side);
  Eigen::MatrixXd z = projection.forward(encoder.forward(x));
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const double n = z.col(c).norm();
    if (n > 0.0) z.col(c) /= n;
  }
  return z;
}

PairSimilarity pair_similarity(const PretextResult& model, std::span<const PretextPair> pairs, int input_side) {
  if (pairs.size() < 2) throw InvalidArgument("pair_similarity: need at least two pairs");
  std::vector<Eigen::MatrixXd> radar, image;
  for (const auto& p : pairs) {
    radar.push_back(p.radar);
    image.push_back(p.image);
  }
  const Eigen::MatrixXd zr = embed(model.radar_encoder, model.radar_projection, radar, input_side);
  const Eigen::MatrixXd zi = embed(model.image_encoder, model.image_projection, image, input_side);
  const Eigen::MatrixXd sim = zr.transpose() * zi;
  const auto n = static_cast<double>(pairs.size());
  PairSimilarity s;
  s.positive_mean = sim.diagonal().mean();
  s.mismatched_mean = (sim.sum() - sim.diagonal().sum()) / (n * (n - 1.0));
  return s;
}

}  // namespace cityradar
