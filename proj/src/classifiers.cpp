#include "cdfsl/classifiers.hpp"

#include <numeric>

namespace cdfsl {

namespace {

RowMatrix<double> one_hot(const std::vector<int>& labels, int num_classes) {
  RowMatrix<double> y = RowMatrix<double>::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return y;
}

void check_dim(Eigen::Index expected, Eigen::Index got, const char* what) {
  if (expected != got) {
    throw DataError(std::string(what) + ": feature dim " + std::to_string(got) + " does not match head dim " +
                    std::to_string(expected));
  }
}

// Runs `epochs` passes of momentum SGD over (mini-)batches. `gradient` maps the
// batch row indices to a LossGradient; `apply` consumes the updated velocity.
template <typename Params, typename GradFn, typename ApplyFn>
void momentum_sgd(Eigen::Index rows, const TrainConfig& config, Seed seed, Params& velocity, GradFn&& gradient,
                  ApplyFn&& apply) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const bool full = config.batch_size <= 0 || config.batch_size >= rows;
  const Eigen::Index batch = full ? rows : config.batch_size;
  Rng rng(seed);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (!full) rng.shuffle(order);
    for (Eigen::Index start = 0; start < rows; start += batch) {
      const Eigen::Index stop = std::min(rows, start + batch);
      std::vector<Eigen::Index> idx(order.begin() + start, order.begin() + stop);
      auto grad = gradient(idx);
      if (!std::isfinite(grad.loss)) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
      }
      velocity.weights = config.momentum * velocity.weights + grad.weights;
      velocity.bias = config.momentum * velocity.bias + grad.bias;
      apply(velocity);
    }
  }
}

template <typename Derived>
RowMatrix<double> select_rows(const Eigen::MatrixBase<Derived>& m, const std::vector<Eigen::Index>& idx) {
  if (static_cast<Eigen::Index>(idx.size()) == m.rows()) return m;
  return m(idx, Eigen::all);
}

std::vector<int> select_labels(const std::vector<int>& labels, const std::vector<Eigen::Index>& idx) {
  if (idx.size() == labels.size()) return labels;
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

void SupportSet::validate() const {
  if (features.rows() == 0) throw DataError("support set is empty");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
    throw DataError("support set has " + std::to_string(features.rows()) + " rows but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw DataError("support set declares no classes");
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw DataError("support label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int k = 0; k < num_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) throw DataError("class " + std::to_string(k) + " has no support");
  }
  if (!features.allFinite()) throw DataError("support features contain non-finite values");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size < 0) throw ConfigError("batch size must be >= 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
}

LossGradient linear_loss_gradient(const LinearHead& head, const RowMatrix<double>& features,
                                  const std::vector<int>& labels, double weight_decay) {
  const auto n = static_cast<double>(features.rows());
  RowMatrix<double> logits = features * head.weights.transpose();
  logits.rowwise() += head.bias.transpose();
  ProbMatrix probs = softmax_rows(logits);

  LossGradient out;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) loss -= std::log(probs(i, labels[static_cast<std::size_t>(i)]));
  out.loss = loss / n + 0.5 * weight_decay * head.weights.squaredNorm();

  RowMatrix<double> residual = (probs - one_hot(labels, static_cast<int>(head.weights.rows()))) / n;
  out.weights = residual.transpose() * features;
  if (weight_decay != 0.0) out.weights += weight_decay * head.weights;
  out.bias = residual.colwise().sum().transpose();
  return out;
}

LinearHead fit_linear(const SupportSet& support, const TrainConfig& config, Seed seed) {
  support.validate();
  config.validate();
  const RowMatrix<double> x = support.features.cast<double>();
  const int k = support.num_classes;

  LinearHead head{RowMatrix<double>::Zero(k, x.cols()), Vector<double>::Zero(k)};
  LinearHead velocity = head;
  momentum_sgd(
      x.rows(), config, seed, velocity,
      [&](const std::vector<Eigen::Index>& idx) {
        return linear_loss_gradient(head, select_rows(x, idx), select_labels(support.labels, idx),
                                    config.weight_decay);
      },
      [&](const LinearHead& v) {
        head.weights -= config.learning_rate * v.weights;
        head.bias -= config.learning_rate * v.bias;
      });
  if (!head.weights.allFinite() || !head.bias.allFinite()) throw NumericError("linear head diverged");
  return head;
}

ProbMatrix predict_linear(const LinearHead& head, const FeatureMatrix& features) {
  check_dim(head.weights.cols(), features.cols(), "predict_linear");
  RowMatrix<double> logits = features.cast<double>() * head.weights.transpose();
  logits.rowwise() += head.bias.transpose();
  return softmax_rows(logits);
}

CentroidHead fit_centroid(const SupportSet& support, Distance distance) {
  support.validate();
  CentroidHead head{RowMatrix<double>::Zero(support.num_classes, support.features.cols()), distance};
  Vector<double> counts = Vector<double>::Zero(support.num_classes);
  for (Eigen::Index i = 0; i < support.features.rows(); ++i) {
    const int y = support.labels[static_cast<std::size_t>(i)];
    head.prototypes.row(y) += support.features.row(i).cast<double>();
    counts(y) += 1.0;
  }
  head.prototypes.array().colwise() /= counts.array();
  return head;
}

ProbMatrix predict_centroid(const CentroidHead& head, const FeatureMatrix& query, Warnings* warnings) {
  check_dim(head.prototypes.cols(), query.cols(), "centroid_predict");
  if (head.distance == Distance::negative_cosine) {
    // exp(-d) with d = -cos
    return softmax_rows(cosine_similarity(query, head.prototypes, warnings, "mean-centroid"));
  }
  const RowMatrix<double> q = query.cast<double>();
  RowMatrix<double> neg_dist(q.rows(), head.prototypes.rows());
  for (Eigen::Index k = 0; k < head.prototypes.rows(); ++k) {
    neg_dist.col(k) = -(q.rowwise() - head.prototypes.row(k)).rowwise().squaredNorm();
  }
  return softmax_rows(neg_dist);
}

ProbMatrix centroid_predict(const SupportSet& support, const FeatureMatrix& query, Distance distance,
                            Warnings* warnings) {
  return predict_centroid(fit_centroid(support, distance), query, warnings);
}

CosineHead fit_cosine(const SupportSet& support, const TrainConfig& config, Seed seed, double scale,
                      Warnings* warnings) {
  support.validate();
  config.validate();
  if (!(scale > 0)) throw ConfigError("cosine scale must be > 0");
  const int k = support.num_classes;
  const Eigen::Index d = support.features.cols();

  // Rows of the support block scaled to unit length; zero rows stay zero and
  // then contribute neither similarity nor gradient.
  RowMatrix<double> unit = support.features.cast<double>();
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (norm > 0.0) {
      unit.row(i) /= norm;
    } else {
      const std::string msg = "zero-norm support row " + std::to_string(i) + " in cosine head";
      if (warnings == nullptr) throw ZeroNormError(msg);
      warnings->push_back(msg + "; row ignored");
    }
  }

  CosineHead head{RowMatrix<double>(k, d), scale};
  Rng init(derive_seed(seed, 0xC05));
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index c = 0; c < d; ++c) head.weights(r, c) = 1e-2 * init.normal();
  for (Eigen::Index r = 0; r < k; ++r) {
    if (head.weights.row(r).norm() == 0.0) head.weights(r, r % d) = 1e-2;
  }

  struct Velocity {
    RowMatrix<double> weights;
    Vector<double> bias;
  } velocity{RowMatrix<double>::Zero(k, d), Vector<double>::Zero(0)};

  momentum_sgd(
      unit.rows(), config, seed, velocity,
      [&](const std::vector<Eigen::Index>& idx) {
        const RowMatrix<double> xb = select_rows(unit, idx);
        const auto yb = select_labels(support.labels, idx);
        const Vector<double> norms = head.weights.rowwise().norm();
        const RowMatrix<double> w_unit = head.weights.array().colwise() / norms.array();
        const RowMatrix<double> cos = xb * w_unit.transpose();
        const ProbMatrix probs = softmax_rows(scale * cos);

        LossGradient g;
        const auto n = static_cast<double>(xb.rows());
        for (Eigen::Index i = 0; i < probs.rows(); ++i) g.loss -= std::log(probs(i, yb[static_cast<std::size_t>(i)]));
        g.loss /= n;
        const RowMatrix<double> residual = (probs - one_hot(yb, k)) / n;
        // d cos(x, w) / dw = (x_unit - cos * w_unit) / ||w||
        const Vector<double> coupling = (residual.array() * cos.array()).colwise().sum().transpose();
        g.weights = scale * (residual.transpose() * xb - coupling.asDiagonal() * w_unit);
        g.weights.array().colwise() /= norms.array();
        if (config.weight_decay != 0.0) g.weights += config.weight_decay * head.weights;
        g.bias = Vector<double>::Zero(0);
        return g;
      },
      [&](const Velocity& v) { head.weights -= config.learning_rate * v.weights; });

  if (!head.weights.allFinite()) throw NumericError("cosine head diverged");
  for (Eigen::Index r = 0; r < k; ++r) {
    if (head.weights.row(r).norm() == 0.0) throw NumericError("cosine head weight vector collapsed to zero");
  }
  return head;
}

ProbMatrix predict_cosine(const CosineHead& head, const FeatureMatrix& features, Warnings* warnings) {
  check_dim(head.weights.cols(), features.cols(), "predict_cosine");
  return softmax_rows(head.scale * cosine_similarity(features, head.weights, warnings, "cosine head"));
}

ProbMatrix matching_predict(const SupportSet& support, const FeatureMatrix& query, Warnings* warnings) {
  support.validate();
  check_dim(support.features.cols(), query.cols(), "matching_predict");
  const ProbMatrix attention = softmax_rows(cosine_similarity(query, support.features, warnings, "matching rule"));
  return attention * one_hot(support.labels, support.num_classes);
}

std::pair<FeatureMatrix, FeatureMatrix> transductive_standardize(const FeatureMatrix& support,
                                                                 const FeatureMatrix& query) {
  if (query.rows() < 2) throw DataError("transductive standardization needs at least 2 query rows");
  if (support.cols() != query.cols()) throw DataError("transductive standardization: dim mismatch");
  const RowMatrix<double> q = query.cast<double>();
  const Eigen::RowVectorXd mean = q.colwise().mean();
  const Eigen::RowVectorXd stddev =
      ((q.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(q.rows())).sqrt();
  const Eigen::RowVectorXd denom = stddev.array() + kStandardizeEpsilon;
  const auto transform = [&](const FeatureMatrix& block) -> FeatureMatrix {
    RowMatrix<double> out = block.cast<double>();
    out.rowwise() -= mean;
    out.array().rowwise() /= denom.array();
    return out.cast<float>();
  };
  return {transform(support), transform(query)};
}

ProbMatrix predict(const ClassifierHead& head, const FeatureMatrix& query, Warnings* warnings) {
  return std::visit(
      [&](const auto& h) -> ProbMatrix {
        using H = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<H, LinearHead>) {
          return predict_linear(h, query);
        } else if constexpr (std::is_same_v<H, CosineHead>) {
          return predict_cosine(h, query, warnings);
        } else if constexpr (std::is_same_v<H, CentroidHead>) {
          return predict_centroid(h, query, warnings);
        } else {
          return matching_predict(SupportSet{h.support, h.labels, h.num_classes}, query, warnings);
        }
      },
      head);
}

std::vector<int> predicted_labels(const ProbMatrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(argmax_lowest(probs.row(i)));
  return out;
}

double accuracy(const ProbMatrix& probs, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows() || labels.empty()) {
    throw DataError("accuracy: label count does not match prediction rows");
  }
  const auto pred = predicted_labels(probs);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace cdfsl
