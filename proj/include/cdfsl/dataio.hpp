#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cdfsl/core.hpp"

namespace cdfsl {

/// Identifies one layer of one source model in an embedding library.
struct LayerKey {
  std::string model_id;
  int layer_index = 0;

  auto operator<=>(const LayerKey&) const = default;
  bool operator==(const LayerKey&) const = default;
};

std::string to_string(const LayerKey& key);
/// Parses "model:index".
LayerKey parse_layer_key(const std::string& text);

/// Immutable item collection with one feature matrix per layer.
///
/// Item ids are the row positions 0..num_items-1. Layers keep the order in
/// which they were declared (manifest order), which is also the model order
/// used by multi-model selection.
class EmbeddingDataset {
 public:
  EmbeddingDataset() = default;
  /// Validates every invariant; throws DataError on violation.
  EmbeddingDataset(std::string name, std::vector<ClassId> labels, std::vector<LayerKey> layer_order,
                   std::map<LayerKey, FeatureMatrix> features);

  const std::string& name() const { return name_; }
  std::size_t num_items() const { return labels_.size(); }
  const std::vector<ClassId>& labels() const { return labels_; }
  ClassId label(std::size_t item) const { return labels_[item]; }
  /// Sorted class id -> ascending item positions.
  const std::map<ClassId, std::vector<std::size_t>>& class_index() const { return class_index_; }
  const std::vector<LayerKey>& layers() const { return layer_order_; }
  /// Model ids in first-appearance order.
  std::vector<std::string> models() const;
  std::vector<LayerKey> layers_of(const std::string& model_id) const;
  bool has_layer(const LayerKey& key) const { return features_.contains(key); }
  const FeatureMatrix& features(const LayerKey& key) const;
  Eigen::Index dim(const LayerKey& key) const { return features(key).cols(); }

 private:
  std::string name_;
  std::vector<ClassId> labels_;
  std::vector<LayerKey> layer_order_;
  std::map<LayerKey, FeatureMatrix> features_;
  std::map<ClassId, std::vector<std::size_t>> class_index_;
};

/// Channel-wise spatial mean of a C x H x W tensor stored channel-major.
/// Accumulates in double and rounds once to Scalar.
template <typename Scalar>
Vector<Scalar> global_average_pool(const Scalar* data, Eigen::Index channels, Eigen::Index height,
                                   Eigen::Index width) {
  if (height < 1 || width < 1) throw DataError("global_average_pool: empty spatial extent");
  const Eigen::Index plane = height * width;
  Vector<Scalar> out(channels);
  for (Eigen::Index c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (Eigen::Index k = 0; k < plane; ++k) sum += static_cast<double>(data[c * plane + k]);
    out(c) = static_cast<Scalar>(sum / static_cast<double>(plane));
  }
  return out;
}

/// Overload taking the tensor as a C x (H*W) matrix.
template <typename Derived>
Vector<typename Derived::Scalar> global_average_pool(const Eigen::MatrixBase<Derived>& channels_by_plane) {
  if (channels_by_plane.cols() < 1) throw DataError("global_average_pool: empty spatial extent");
  return (channels_by_plane.template cast<double>().rowwise().sum() /
          static_cast<double>(channels_by_plane.cols()))
      .template cast<typename Derived::Scalar>();
}

/// Accepts the manifest file or the directory holding manifest.json.
EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json, labels.bin and one .fslb file per layer into `dir`.
/// The manifest is written last via rename, so a failed write leaves none.
void write_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& dir);

enum class LayerKind { informative, pure_noise, random_projection };

std::string to_string(LayerKind kind);
LayerKind parse_layer_kind(const std::string& text);

struct SyntheticLayer {
  std::string model_id = "m0";
  int layer_index = 0;
  LayerKind kind = LayerKind::informative;
  /// Output width; 0 means SyntheticSpec::dim.
  int dim = 0;
};

/// Gaussian-mixture stand-in for a target domain.
struct SyntheticSpec {
  int num_classes = 5;
  int items_per_class = 100;
  int dim = 64;
  double class_separation = 4.0;
  double shift_level = 0.0;
  double noise_sigma = 1.0;
  std::vector<SyntheticLayer> layers{SyntheticLayer{}};

  /// Throws ConfigError when an invariant does not hold.
  void validate() const;
};

/// Class means before the domain shift: vertices of a regular simplex centred
/// at the origin with pairwise distance class_separation (num_classes x dim).
RowMatrix<double> simplex_means(const SyntheticSpec& spec);

/// Class means after the seeded rotation blend and translation of norm
/// shift_level. Equals simplex_means when shift_level is 0.
RowMatrix<double> shifted_means(const SyntheticSpec& spec, Seed seed);

EmbeddingDataset generate_synthetic(const SyntheticSpec& spec, Seed seed);

/// Number of Monte-Carlo draws used by bayes_accuracy for more than two classes.
inline constexpr int kBayesSamples = 200000;
inline constexpr Seed kBayesSeed = 0x5eed0fba7e5ULL;

/// Bayes-optimal accuracy of the informative mixture.
double bayes_accuracy(const SyntheticSpec& spec);

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

}  // namespace cdfsl
