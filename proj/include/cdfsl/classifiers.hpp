#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cdfsl/core.hpp"

namespace cdfsl {

/// Labelled support block. Labels are local class ids 0..num_classes-1.
struct SupportSet {
  FeatureMatrix features;
  std::vector<int> labels;
  int num_classes = 0;

  /// Throws DataError unless every row is labelled, labels are in range and
  /// every class has at least one row.
  void validate() const;
};

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.01;
  double momentum = 0.9;
  /// 0 trains on the full support block every step.
  int batch_size = 0;
  double weight_decay = 0.0;

  void validate() const;
};

struct LinearHead {
  RowMatrix<double> weights;  // K x dim
  Vector<double> bias;        // K
};

struct CosineHead {
  RowMatrix<double> weights;  // K x dim, one direction per class
  double scale = 10.0;
};

enum class Distance { negative_cosine, squared_euclidean };

struct CentroidHead {
  RowMatrix<double> prototypes;  // K x dim class means
  Distance distance = Distance::negative_cosine;
};

/// Frozen support memory for the attention-kernel label rule.
struct MatchingHead {
  FeatureMatrix support;
  std::vector<int> labels;
  int num_classes = 0;
};

using ClassifierHead = std::variant<LinearHead, CosineHead, CentroidHead, MatchingHead>;

/// Sink for recoverable zero-norm events. Passing nullptr turns them into
/// ZeroNormError.
using Warnings = std::vector<std::string>;

inline constexpr double kDefaultCosineScale = 10.0;
inline constexpr double kStandardizeEpsilon = 1e-5;

/// Pairwise cosine similarities (rows of `a` against rows of `b`) in double.
/// A zero row has similarity 0 to everything when `warnings` is given.
template <typename DerivedA, typename DerivedB>
RowMatrix<double> cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                                    Warnings* warnings, const char* what) {
  const auto unit_rows = [&](const auto& m, const char* side) {
    RowMatrix<double> u = m.template cast<double>();
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double norm = u.row(i).norm();
      if (norm > 0.0) {
        u.row(i) /= norm;
        continue;
      }
      const std::string msg = std::string("zero-norm ") + side + " row " + std::to_string(i) + " in " + what;
      if (warnings == nullptr) throw ZeroNormError(msg);
      warnings->push_back(msg + "; similarity set to 0");
    }
    return u;
  };
  return unit_rows(a, "query") * unit_rows(b, "reference").transpose();
}

struct LossGradient {
  double loss = 0.0;
  RowMatrix<double> weights;
  Vector<double> bias;
};

/// Mean softmax cross-entropy of a linear head (plus 0.5 * weight_decay *
/// ||W||^2) and its gradient.
LossGradient linear_loss_gradient(const LinearHead& head, const RowMatrix<double>& features,
                                  const std::vector<int>& labels, double weight_decay = 0.0);

/// Softmax regression trained by SGD with momentum from a zero start.
LinearHead fit_linear(const SupportSet& support, const TrainConfig& config, Seed seed);
ProbMatrix predict_linear(const LinearHead& head, const FeatureMatrix& features);

CentroidHead fit_centroid(const SupportSet& support, Distance distance);
ProbMatrix predict_centroid(const CentroidHead& head, const FeatureMatrix& query, Warnings* warnings = nullptr);

/// Softmax over negative distances to class means. Negative cosine gives the
/// mean-centroid classifier, squared Euclidean the prototypical rule.
ProbMatrix centroid_predict(const SupportSet& support, const FeatureMatrix& query, Distance distance,
                            Warnings* warnings = nullptr);

/// Cosine-similarity head: class weight vectors start as seeded standard
/// normal draws scaled by 1e-2 and are trained on softmax(scale * cos).
CosineHead fit_cosine(const SupportSet& support, const TrainConfig& config, Seed seed,
                      double scale = kDefaultCosineScale, Warnings* warnings = nullptr);
ProbMatrix predict_cosine(const CosineHead& head, const FeatureMatrix& features, Warnings* warnings = nullptr);

/// Attention-weighted vote over support labels, attention = softmax of
/// cosine similarity (temperature 1).
ProbMatrix matching_predict(const SupportSet& support, const FeatureMatrix& query, Warnings* warnings = nullptr);

/// Standardizes both blocks with per-dimension statistics of the query block.
std::pair<FeatureMatrix, FeatureMatrix> transductive_standardize(const FeatureMatrix& support,
                                                                 const FeatureMatrix& query);

ProbMatrix predict(const ClassifierHead& head, const FeatureMatrix& query, Warnings* warnings = nullptr);

/// Argmax per row, ties to the lowest class id.
std::vector<int> predicted_labels(const ProbMatrix& probs);
double accuracy(const ProbMatrix& probs, const std::vector<int>& labels);

}  // namespace cdfsl
