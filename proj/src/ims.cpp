#include "cdfsl/ims.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace cdfsl {

ModelLibrary::ModelLibrary(const EmbeddingDataset& dataset) : ModelLibrary(dataset, dataset.models()) {}

ModelLibrary::ModelLibrary(const EmbeddingDataset& dataset, std::vector<std::string> sources)
    : dataset_(&dataset), sources_(std::move(sources)) {
  if (sources_.empty()) throw ConfigError("model library is empty");
  for (const auto& id : sources_) {
    auto layers = dataset.layers_of(id);
    if (layers.empty()) throw ConfigError("model '" + id + "' has no layers in dataset '" + dataset.name() + "'");
    if (!layers_.emplace(id, std::move(layers)).second) throw ConfigError("model '" + id + "' listed twice");
  }
}

const std::vector<LayerKey>& ModelLibrary::layers_of(const std::string& model_id) const {
  const auto it = layers_.find(model_id);
  if (it == layers_.end()) throw ConfigError("model '" + model_id + "' is not in the library");
  return it->second;
}

std::vector<LayerKey> ModelLibrary::all_layers() const {
  std::vector<LayerKey> out;
  for (const auto& id : sources_) {
    const auto& layers = layers_of(id);
    out.insert(out.end(), layers.begin(), layers.end());
  }
  return out;
}

LayeredSupport LayeredSupport::from_episode(const ModelLibrary& library, const Episode& episode) {
  LayeredSupport out;
  out.labels = episode.support_labels;
  out.num_classes = episode.ways();
  for (const auto& key : library.all_layers()) {
    out.blocks.emplace(key, gather_rows(library.dataset().features(key), episode.support));
  }
  return out;
}

SupportSet LayeredSupport::select(const std::vector<LayerKey>& layers) const {
  return SupportSet{concat_features(layers, blocks), labels, num_classes};
}

void CvConfig::validate() const {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  probe.validate();
}

FeatureMatrix concat_features(const std::vector<LayerKey>& layers,
                              const std::map<LayerKey, FeatureMatrix>& item_rows) {
  if (layers.empty()) throw DataError("concat_features: no layers given");
  Eigen::Index rows = -1;
  Eigen::Index width = 0;
  std::vector<const FeatureMatrix*> blocks;
  for (const auto& key : layers) {
    const auto it = item_rows.find(key);
    if (it == item_rows.end()) throw DataError("concat_features: no rows for layer " + to_string(key));
    if (rows >= 0 && it->second.rows() != rows) {
      throw DataError("concat_features: layer " + to_string(key) + " has " + std::to_string(it->second.rows()) +
                      " rows, expected " + std::to_string(rows));
    }
    rows = it->second.rows();
    width += it->second.cols();
    blocks.push_back(&it->second);
  }
  FeatureMatrix out(rows, width);
  Eigen::Index col = 0;
  for (const auto* block : blocks) {
    out.middleCols(col, block->cols()) = *block;
    col += block->cols();
  }
  return out;
}

FoldPlan stratified_folds(const std::vector<int>& labels, int num_classes, int folds, Seed seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);

  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& rows : by_class) smallest = std::min(smallest, rows.size());

  FoldPlan plan;
  plan.folds = folds;
  if (smallest < static_cast<std::size_t>(folds)) {
    if (smallest < 2) throw ConfigError("cross-validation needs at least 2 support items per class");
    plan.folds = static_cast<int>(smallest);
    plan.warning = "cross-validation folds reduced from " + std::to_string(folds) + " to " +
                   std::to_string(plan.folds) + " (smallest class has " + std::to_string(smallest) + " items)";
  }
  plan.fold_of.assign(labels.size(), 0);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto rows = by_class[k];
    Rng rng(derive_seed(seed, k));
    rng.shuffle(rows);
    for (std::size_t r = 0; r < rows.size(); ++r) plan.fold_of[rows[r]] = static_cast<int>(r % plan.folds);
  }
  return plan;
}

double cv_error(const SupportSet& support, const CvConfig& cfg, Warnings* warnings) {
  support.validate();
  cfg.validate();
  const FoldPlan plan = stratified_folds(support.labels, support.num_classes, cfg.folds, cfg.seed);
  if (plan.warning && warnings != nullptr) warnings->push_back(*plan.warning);

  double total = 0.0;
  for (int fold = 0; fold < plan.folds; ++fold) {
    std::vector<std::size_t> train;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < plan.fold_of.size(); ++i) (plan.fold_of[i] == fold ? held : train).push_back(i);

    SupportSet fit_set{gather_rows(support.features, train), {}, support.num_classes};
    for (auto i : train) fit_set.labels.push_back(support.labels[i]);
    std::vector<int> held_labels;
    for (auto i : held) held_labels.push_back(support.labels[i]);

    const LinearHead head = fit_linear(fit_set, cfg.probe, derive_seed(cfg.seed, 1000 + fold));
    total += 1.0 - accuracy(predict_linear(head, gather_rows(support.features, held)), held_labels);
  }
  return total / plan.folds;
}

double cv_error(const LayeredSupport& support, const std::vector<LayerKey>& layers, const CvConfig& cfg,
                Warnings* warnings) {
  return cv_error(support.select(layers), cfg, warnings);
}

std::vector<Stage1Choice> stage1_select(const ModelLibrary& library, const LayeredSupport& support,
                                        const CvConfig& cfg, Warnings* warnings) {
  std::vector<Stage1Choice> out;
  for (const auto& model : library.sources()) {
    // Starts at +inf so the first layer is always accepted.
    Stage1Choice best{model, {}, std::numeric_limits<double>::infinity()};
    for (const auto& layer : library.layers_of(model)) {
      const double err = cv_error(support, {layer}, cfg, warnings);
      if (err < best.cv_error) {
        best.layer = layer;
        best.cv_error = err;
      }
    }
    out.push_back(std::move(best));
  }
  return out;
}

LayerSelection stage2_select(const std::vector<Stage1Choice>& stage1, const LayeredSupport& support,
                             const CvConfig& cfg, Warnings* warnings) {
  if (stage1.empty()) throw ConfigError("stage 2 needs at least one stage-1 layer");
  std::vector<std::size_t> order(stage1.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stage1[a].cv_error < stage1[b].cv_error; });

  LayerSelection sel;
  sel.stage1 = stage1;
  sel.selected.push_back(stage1[order.front()].layer);
  sel.trace.push_back(stage1[order.front()].cv_error);
  for (std::size_t i = 1; i < order.size(); ++i) {
    const LayerKey& candidate = stage1[order[i]].layer;
    if (std::find(sel.selected.begin(), sel.selected.end(), candidate) != sel.selected.end()) continue;
    auto trial = sel.selected;
    trial.push_back(candidate);
    const double err = cv_error(support, trial, cfg, warnings);
    if (err < sel.trace.back()) {
      sel.selected = std::move(trial);
      sel.trace.push_back(err);
    }
  }
  return sel;
}

namespace {

ImsResult probe_on(const ModelLibrary& library, const Episode& episode, const LayeredSupport& support,
                   LayerSelection selection, const TrainConfig& probe, Seed probe_seed) {
  const SupportSet train = support.select(selection.selected);
  const LinearHead head = fit_linear(train, probe, probe_seed);
  std::map<LayerKey, FeatureMatrix> query_rows;
  for (const auto& key : selection.selected) {
    query_rows.emplace(key, gather_rows(library.dataset().features(key), episode.query));
  }
  ImsResult out;
  out.probs = predict_linear(head, concat_features(selection.selected, query_rows));
  out.final_dim = train.features.cols();
  out.selection = std::move(selection);
  return out;
}

}  // namespace

ImsResult ims_classify(const ModelLibrary& library, const Episode& episode, const CvConfig& cfg,
                       const TrainConfig& probe, Seed probe_seed, Warnings* warnings) {
  cfg.validate();
  const LayeredSupport support = LayeredSupport::from_episode(library, episode);
  auto stage1 = stage1_select(library, support, cfg, warnings);
  auto selection = stage2_select(stage1, support, cfg, warnings);
  return probe_on(library, episode, support, std::move(selection), probe, probe_seed);
}

ImsResult all_embeddings_classify(const ModelLibrary& library, const Episode& episode, const TrainConfig& probe,
                                  Seed probe_seed) {
  const LayeredSupport support = LayeredSupport::from_episode(library, episode);
  LayerSelection everything;
  everything.selected = library.all_layers();
  return probe_on(library, episode, support, std::move(everything), probe, probe_seed);
}

}  // namespace cdfsl
