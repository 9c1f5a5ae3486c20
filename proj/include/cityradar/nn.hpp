#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cityradar/errors.hpp"
#include "cityradar/ra_map.hpp"

namespace cityradar {

enum class Activation { identity, relu };

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;
  Activation activation = Activation::relu;
};

/// Fully connected network; batched inputs are column-per-sample.
template <class Scalar>
class Mlp {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  struct Tape {
    std::vector<Matrix> inputs;
    std::vector<Matrix> pre;
  };

  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer<Scalar>> layers) : layers_(std::move(layers)) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows()) {
        throw InvalidArgument("mlp: layer " + std::to_string(l) + " bias size does not match weight rows");
      }
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
        throw InvalidArgument("mlp: layer " + std::to_string(l) + " input width does not chain");
      }
    }
  }

  /// He-normal weights, zero biases. `widths` has one more entry than `activations`.
  static Mlp random(std::span<const int> widths, std::span<const Activation> activations, std::mt19937_64& rng) {
    if (widths.size() != activations.size() + 1) throw InvalidArgument("mlp: widths/activations mismatch");
    std::vector<DenseLayer<Scalar>> layers;
    for (std::size_t l = 0; l < activations.size(); ++l) {
      const double gain = activations[l] == Activation::relu ? 2.0 : 1.0;
      std::normal_distribution<double> dist(0.0, std::sqrt(gain / widths[l]));
      DenseLayer<Scalar> layer;
      layer.weight.resize(widths[l + 1], widths[l]);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = static_cast<Scalar>(dist(rng));
      }
      layer.bias = Vector::Zero(widths[l + 1]);
      layer.activation = activations[l];
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  const std::vector<DenseLayer<Scalar>>& layers() const { return layers_; }
  std::vector<DenseLayer<Scalar>>& layers() { return layers_; }

  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows(); }

  Matrix forward(const Matrix& x) const { return run(x, nullptr); }

  Matrix forward(const Matrix& x, Tape& tape) const { return run(x, &tape); }

  /// Writes parameter gradients into `grads` (reshaped as needed) and
  /// returns the gradient with respect to the input.
  Matrix backward(const Tape& tape, const Matrix& grad_out, Mlp& grads) const {
    if (grads.layers_.size() != layers_.size()) grads = zeros_like();
    Matrix g = grad_out;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const DenseLayer<Scalar>& layer = layers_[k];
      if (layer.activation == Activation::relu) g = (tape.pre[k].array() > Scalar(0)).select(g, Scalar(0));
      grads.layers_[k].weight.noalias() = g * tape.inputs[k].transpose();
      grads.layers_[k].bias = g.rowwise().sum();
      Matrix next = layer.weight.transpose() * g;
      g.swap(next);
    }
    return g;
  }

  Mlp zeros_like() const {
    Mlp z = *this;
    for (auto& l : z.layers_) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  bool same_shape(const Mlp& o) const {
    if (layers_.size() != o.layers_.size()) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (layers_[k].weight.rows() != o.layers_[k].weight.rows() ||
          layers_[k].weight.cols() != o.layers_[k].weight.cols() ||
          layers_[k].activation != o.layers_[k].activation) {
        return false;
      }
    }
    return true;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  Vector flatten() const {
    Vector v(parameter_count());
    Eigen::Index o = 0;
    for (const auto& l : layers_) {
      v.segment(o, l.weight.size()) = l.weight.reshaped();
      o += l.weight.size();
      v.segment(o, l.bias.size()) = l.bias;
      o += l.bias.size();
    }
    return v;
  }

  void assign(const Vector& v) {
    if (v.size() != parameter_count()) throw InvalidArgument("mlp: parameter vector size mismatch");
    Eigen::Index o = 0;
    for (auto& l : layers_) {
      l.weight.reshaped() = v.segment(o, l.weight.size());
      o += l.weight.size();
      l.bias = v.segment(o, l.bias.size());
      o += l.bias.size();
    }
  }

  /// this += alpha * other
  Mlp& axpy(Scalar alpha, const Mlp& other) {
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      layers_[k].weight += alpha * other.layers_[k].weight;
      layers_[k].bias += alpha * other.layers_[k].bias;
    }
    return *this;
  }

  template <class T>
  Mlp<T> cast() const {
    std::vector<DenseLayer<T>> out;
    for (const auto& l : layers_) out.push_back({l.weight.template cast<T>(), l.bias.template cast<T>(), l.activation});
    return Mlp<T>(std::move(out));
  }

  bool all_finite() const {
    for (const auto& l : layers_) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }

  bool operator==(const Mlp& o) const {
    if (!same_shape(o)) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (layers_[k].weight != o.layers_[k].weight || layers_[k].bias != o.layers_[k].bias) return false;
    }
    return true;
  }

 private:
  Matrix run(const Matrix& x, Tape* tape) const {
    if (!layers_.empty() && x.rows() != input_dim()) {
      throw InvalidArgument("mlp: input has " + std::to_string(x.rows()) + " rows, expected " +
                            std::to_string(input_dim()));
    }
    if (tape) {
      tape->inputs.clear();
      tape->pre.clear();
    }
    Matrix h = x;
    for (const auto& layer : layers_) {
      Matrix z = layer.weight * h;
      z.colwise() += layer.bias;
      if (tape) {
        tape->inputs.push_back(std::move(h));
        tape->pre.push_back(z);
      }
      h = layer.activation == Activation::relu ? Matrix(z.cwiseMax(Scalar(0))) : std::move(z);
    }
    return h;
  }

  std::vector<DenseLayer<Scalar>> layers_;
};

using MlpParams = Mlp<double>;

template <class Scalar>
VectorX<Scalar> mlp_forward(const Mlp<Scalar>& params, const VectorX<Scalar>& input) {
  return params.forward(input);
}

/// theta_k <- m * theta_k + (1 - m) * theta_q, element-wise.
template <class Scalar>
Mlp<Scalar> momentum_update(const Mlp<Scalar>& theta_k, const Mlp<Scalar>& theta_q, Scalar m) {
  if (!(m >= Scalar(0) && m < Scalar(1))) throw InvalidArgument("momentum_update: m must lie in [0, 1)");
  if (!theta_k.same_shape(theta_q)) throw InvalidArgument("momentum_update: parameter shapes differ");
  Mlp<Scalar> out = theta_k;
  for (std::size_t k = 0; k < out.layers().size(); ++k) {
    auto& l = out.layers()[k];
    const auto& q = theta_q.layers()[k];
    l.weight = m * l.weight + (Scalar(1) - m) * q.weight;
    l.bias = m * l.bias + (Scalar(1) - m) * q.bias;
  }
  return out;
}

/// FIFO ring buffer of unit-norm embeddings. Logical index 0 is the oldest.
template <class Scalar>
class NegativeQueue {
 public:
  using Matrix = MatrixX<Scalar>;
  using Vector = VectorX<Scalar>;

  NegativeQueue(Eigen::Index capacity, Eigen::Index dim) : storage_(Matrix::Zero(dim, capacity)) {
    if (capacity <= 0 || dim <= 0) throw InvalidArgument("negative queue: capacity and dim must be positive");
  }

  Eigen::Index capacity() const { return storage_.cols(); }
  Eigen::Index dim() const { return storage_.rows(); }
  Eigen::Index size() const { return size_; }
  Eigen::Index head() const { return head_; }

  /// Appends each column of `batch` after L2 normalisation.
  template <class Derived>
  void push(const Eigen::MatrixBase<Derived>& batch) {
    if (batch.rows() != dim()) throw InvalidArgument("negative queue: embedding dimension mismatch");
    for (Eigen::Index c = 0; c < batch.cols(); ++c) {
      const Scalar n = batch.col(c).norm();
      if (!(n > Scalar(0))) throw InvalidArgument("negative queue: cannot enqueue a zero embedding");
      storage_.col(head_) = batch.col(c) / n;
      head_ = (head_ + 1) % capacity();
      size_ = std::min(size_ + 1, capacity());
    }
  }

  Eigen::Index physical_index(Eigen::Index logical) const {
    if (logical < 0 || logical >= size_) throw InvalidArgument("negative queue: index out of range");
    return (head_ - size_ + logical + capacity()) % capacity();
  }

  Vector entry(Eigen::Index logical) const { return storage_.col(physical_index(logical)); }

  /// Occupied columns; their order is physical, not logical.
  auto occupied() const { return storage_.leftCols(size_); }

 private:
  Matrix storage_;
  Eigen::Index size_ = 0;
  Eigen::Index head_ = 0;
};

template <class Scalar, class Derived>
NegativeQueue<Scalar> queue_push(NegativeQueue<Scalar> queue, const Eigen::MatrixBase<Derived>& batch) {
  queue.push(batch);
  return queue;
}

template <class Scalar>
struct InfoNceResult {
  Scalar loss;
  VectorX<Scalar> grad;  // with respect to the raw query
};

/// Contrastive loss of the normalised query against every queue entry,
/// with `positive_index` (logical) as the positive.
template <class Scalar>
InfoNceResult<Scalar> info_nce_loss_and_grad(const VectorX<Scalar>& query, Eigen::Index positive_index,
                                             const NegativeQueue<Scalar>& queue, Scalar tau) {
  if (!(tau > Scalar(0))) throw InvalidArgument("info_nce: tau must be positive");
  if (queue.size() == 0) throw InvalidArgument("info_nce: queue is empty");
  if (query.size() != queue.dim()) throw InvalidArgument("info_nce: query dimension mismatch");
  const Eigen::Index pos = queue.physical_index(positive_index);
  const Scalar qnorm = query.norm();
  if (!(qnorm > Scalar(0))) throw InvalidArgument("info_nce: zero query");
  const VectorX<Scalar> qn = query / qnorm;
  const auto z = queue.occupied();

  const VectorX<Scalar> logits = (z.transpose() * qn) / tau;
  const Scalar top = logits.maxCoeff();
  VectorX<Scalar> p = (logits.array() - top).exp();
  const Scalar sum = p.sum();
  p /= sum;
  const Scalar loss = top + std::log(sum) - logits[pos];

  const VectorX<Scalar> g_qn = (z * p - z.col(pos)) / tau;
  return {loss, (g_qn - qn * qn.dot(g_qn)) / qnorm};
}

struct SslConfig {
  double tau = 0.07;
  double m = 0.99;
  int queue_capacity = 1024;
  int embed_dim = 64;
  int proj_dim = 32;
  int hidden_dim = 128;
  int input_side = 32;
  double learning_rate = 0.05;
  int epochs = 20;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Radar map and its image-side counterpart; both are 2D intensity maps.
struct PretextPair {
  Eigen::MatrixXd radar;
  Eigen::MatrixXd image;
};

struct PretextResult {
  MlpParams radar_encoder;
  MlpParams radar_projection;
  MlpParams image_encoder;
  MlpParams image_projection;
  std::vector<double> history;  // mean loss per epoch
};

/// Map pooled to side x side and flattened column-major.
Eigen::VectorXd encoder_input(const Eigen::MatrixXd& map, int side);

PretextResult pretext_train(std::span<const PretextPair> pairs, const SslConfig& config);

/// Unit-norm projection embeddings, one column per map.
Eigen::MatrixXd embed(const MlpParams& encoder, const MlpParams& projection,
                      std::span<const Eigen::MatrixXd> maps, int input_side);

struct PairSimilarity {
  double positive_mean = 0.0;
  double mismatched_mean = 0.0;
};

PairSimilarity pair_similarity(const PretextResult& model, std::span<const PretextPair> pairs, int input_side);

}  // namespace cityradar
