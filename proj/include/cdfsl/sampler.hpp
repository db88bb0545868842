#pragma once

#include <string>
#include <vector>

#include "cdfsl/dataio.hpp"

namespace cdfsl {

/// K-way N-shot episode protocol. Defaults follow the 5-way, 15-query,
/// 600-episode evaluation setup; shots must always be chosen explicitly.
struct EpisodeConfig {
  int ways = 5;
  int shots = 5;
  int queries_per_class = 15;
  int episodes = 600;
  Seed master_seed = 0;

  void validate() const;
};

struct Episode {
  int episode_index = 0;
  Seed seed = 0;
  /// Global class ids in ascending order; local label j is classes[j].
  std::vector<ClassId> classes;
  /// Item positions, class-major: ways x shots.
  std::vector<std::size_t> support;
  std::vector<int> support_labels;
  /// Item positions, class-major: ways x queries_per_class.
  std::vector<std::size_t> query;
  std::vector<int> query_labels;

  int ways() const { return static_cast<int>(classes.size()); }
};

/// SplitMix64(master_seed + episode_index + 1).
constexpr Seed derive_episode_seed(Seed master_seed, std::uint64_t episode_index) {
  return splitmix64(master_seed + episode_index + 1);
}

/// Classes with at least shots + queries items, ascending.
std::vector<ClassId> eligible_classes(const EmbeddingDataset& dataset, const EpisodeConfig& config);

/// Throws DataError when fewer than `ways` classes are eligible. Returns one
/// warning per excluded class.
std::vector<std::string> check_feasibility(const EmbeddingDataset& dataset, const EpisodeConfig& config);

Episode sample_episode(const EmbeddingDataset& dataset, const EpisodeConfig& config, int episode_index);

/// Rows of one layer gathered in the given item order.
FeatureMatrix gather_rows(const FeatureMatrix& features, const std::vector<std::size_t>& positions);

}  // namespace cdfsl
