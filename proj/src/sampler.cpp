#include "cdfsl/sampler.hpp"

namespace cdfsl {

void EpisodeConfig::validate() const {
  if (ways < 1) throw ConfigError("ways must be >= 1");
  if (shots < 1) throw ConfigError("shots must be >= 1");
  if (queries_per_class < 1) throw ConfigError("queries must be >= 1");
  if (episodes < 1) throw ConfigError("episodes must be >= 1");
}

std::vector<ClassId> eligible_classes(const EmbeddingDataset& dataset, const EpisodeConfig& config) {
  const auto needed = static_cast<std::size_t>(config.shots) + static_cast<std::size_t>(config.queries_per_class);
  std::vector<ClassId> out;
  for (const auto& [cls, items] : dataset.class_index()) {
    if (items.size() >= needed) out.push_back(cls);
  }
  return out;
}

std::vector<std::string> check_feasibility(const EmbeddingDataset& dataset, const EpisodeConfig& config) {
  config.validate();
  const auto needed = static_cast<std::size_t>(config.shots) + static_cast<std::size_t>(config.queries_per_class);
  std::vector<std::string> warnings;
  for (const auto& [cls, items] : dataset.class_index()) {
    if (items.size() < needed) {
      warnings.push_back("class " + std::to_string(cls) + " excluded: " + std::to_string(items.size()) +
                         " items < shots + queries = " + std::to_string(needed));
    }
  }
  const auto eligible = eligible_classes(dataset, config);
  if (eligible.size() < static_cast<std::size_t>(config.ways)) {
    throw DataError("dataset '" + dataset.name() + "' has " + std::to_string(eligible.size()) +
                    " classes with >= " + std::to_string(needed) + " items; " + std::to_string(config.ways) +
                    "-way episodes need " + std::to_string(config.ways));
  }
  return warnings;
}

Episode sample_episode(const EmbeddingDataset& dataset, const EpisodeConfig& config, int episode_index) {
  config.validate();
  auto candidates = eligible_classes(dataset, config);
  if (candidates.size() < static_cast<std::size_t>(config.ways)) {
    throw DataError("insufficient classes: " + std::to_string(candidates.size()) + " eligible, " +
                    std::to_string(config.ways) + " required");
  }

  Episode ep;
  ep.episode_index = episode_index;
  ep.seed = derive_episode_seed(config.master_seed, static_cast<std::uint64_t>(episode_index));
  Rng rng(ep.seed);

  rng.partial_shuffle(candidates, static_cast<std::size_t>(config.ways));
  ep.classes.assign(candidates.begin(), candidates.begin() + config.ways);
  std::sort(ep.classes.begin(), ep.classes.end());

  const auto per_class = static_cast<std::size_t>(config.shots + config.queries_per_class);
  ep.support.reserve(static_cast<std::size_t>(config.ways * config.shots));
  ep.query.reserve(static_cast<std::size_t>(config.ways * config.queries_per_class));
  for (int local = 0; local < config.ways; ++local) {
    auto items = dataset.class_index().at(ep.classes[local]);
    rng.partial_shuffle(items, per_class);
    for (int s = 0; s < config.shots; ++s) {
      ep.support.push_back(items[s]);
      ep.support_labels.push_back(local);
    }
    for (int q = 0; q < config.queries_per_class; ++q) {
      ep.query.push_back(items[config.shots + q]);
      ep.query_labels.push_back(local);
    }
  }
  return ep;
}

FeatureMatrix gather_rows(const FeatureMatrix& features, const std::vector<std::size_t>& positions) {
  FeatureMatrix out(static_cast<Eigen::Index>(positions.size()), features.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(positions[i]));
  }
  return out;
}

}  // namespace cdfsl
