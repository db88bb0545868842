#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdfsl/classifiers.hpp"
#include "cdfsl/dataio.hpp"
#include "cdfsl/sampler.hpp"

namespace cdfsl {

/// A set of source models and their layers, resolved against one dataset.
class ModelLibrary {
 public:
  /// Every model and layer of the dataset, in manifest order.
  explicit ModelLibrary(const EmbeddingDataset& dataset);
  /// Only the listed models; throws ConfigError for unknown ids.
  ModelLibrary(const EmbeddingDataset& dataset, std::vector<std::string> sources);

  const EmbeddingDataset& dataset() const { return *dataset_; }
  const std::vector<std::string>& sources() const { return sources_; }
  const std::vector<LayerKey>& layers_of(const std::string& model_id) const;
  /// All layers of all sources, model by model.
  std::vector<LayerKey> all_layers() const;

 private:
  const EmbeddingDataset* dataset_;
  std::vector<std::string> sources_;
  std::map<std::string, std::vector<LayerKey>> layers_;
};

/// One episode's support rows for every layer of a library.
struct LayeredSupport {
  std::map<LayerKey, FeatureMatrix> blocks;
  std::vector<int> labels;
  int num_classes = 0;

  static LayeredSupport from_episode(const ModelLibrary& library, const Episode& episode);
  SupportSet select(const std::vector<LayerKey>& layers) const;
};

struct CvConfig {
  int folds = 5;
  Seed seed = 0;
  TrainConfig probe;

  void validate() const;
};

/// Row-wise concatenation of per-layer blocks in the given layer order.
FeatureMatrix concat_features(const std::vector<LayerKey>& layers, const std::map<LayerKey, FeatureMatrix>& item_rows);

struct FoldPlan {
  /// Fold id per support row.
  std::vector<int> fold_of;
  int folds = 0;
  std::optional<std::string> warning;
};

/// Class-stratified folds: each class is shuffled with a seeded generator and
/// dealt round-robin. When some class has fewer rows than `folds`, the fold
/// count drops to that class size and a warning is attached.
FoldPlan stratified_folds(const std::vector<int>& labels, int num_classes, int folds, Seed seed);

/// Mean held-out misclassification rate of a linear probe over the folds.
double cv_error(const SupportSet& support, const CvConfig& cfg, Warnings* warnings = nullptr);
double cv_error(const LayeredSupport& support, const std::vector<LayerKey>& layers, const CvConfig& cfg,
                Warnings* warnings = nullptr);

struct Stage1Choice {
  std::string model_id;
  LayerKey layer;
  double cv_error = 0.0;
};

struct LayerSelection {
  /// Best layer of every source model, in library order.
  std::vector<Stage1Choice> stage1;
  /// Accepted layers in acceptance order.
  std::vector<LayerKey> selected;
  /// cv_error after each acceptance; strictly decreasing.
  std::vector<double> trace;
};

/// Per model, the layer with the lowest single-layer cv_error (ties keep the
/// lowest layer_index).
std::vector<Stage1Choice> stage1_select(const ModelLibrary& library, const LayeredSupport& support,
                                        const CvConfig& cfg, Warnings* warnings = nullptr);

/// Greedy accretion: start from the stage-1 layer with the lowest error, then
/// visit the rest in ascending stage-1 error and keep a layer only if the
/// concatenated cv_error strictly drops.
LayerSelection stage2_select(const std::vector<Stage1Choice>& stage1, const LayeredSupport& support,
                             const CvConfig& cfg, Warnings* warnings = nullptr);

struct ImsResult {
  ProbMatrix probs;
  LayerSelection selection;
  Eigen::Index final_dim = 0;
};

/// Full two-stage selection on the episode support followed by a linear probe
/// on the concatenated selected layers.
ImsResult ims_classify(const ModelLibrary& library, const Episode& episode, const CvConfig& cfg,
                       const TrainConfig& probe, Seed probe_seed, Warnings* warnings = nullptr);

/// Baseline without selection: probe on every layer of every model.
ImsResult all_embeddings_classify(const ModelLibrary& library, const Episode& episode, const TrainConfig& probe,
                                  Seed probe_seed);

}  // namespace cdfsl
