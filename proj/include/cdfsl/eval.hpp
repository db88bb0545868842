#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cdfsl/classifiers.hpp"
#include "cdfsl/dataio.hpp"
#include "cdfsl/ims.hpp"
#include "cdfsl/sampler.hpp"

namespace cdfsl {

enum class MethodKind {
  linear,
  mean_centroid,
  cosine,
  proto,
  matching,
  transductive_linear,
  ims,
  all_embeddings,
  random_baseline,
};

std::string to_string(MethodKind kind);
/// Accepts the CLI spelling (e.g. "mean-centroid"); throws ConfigError.
MethodKind parse_method_kind(const std::string& text);
/// Kinds that consume the whole model library instead of one layer.
bool uses_library(MethodKind kind);

struct MethodSpec {
  MethodKind kind = MethodKind::linear;
  TrainConfig train;
  CvConfig cv;
  /// Single-layer kinds; empty selects the dataset's first layer.
  std::optional<LayerKey> layer;
  double cosine_scale = kDefaultCosineScale;

  void validate() const;
};

struct EvalReport {
  std::string dataset;
  MethodSpec method;
  EpisodeConfig episodes;
  std::vector<double> per_episode_accuracy;
  double mean = 0.0;
  double ci95 = 0.0;
  std::vector<std::string> warnings;
  std::vector<std::string> notes;
  double wall_time_seconds = 0.0;
};

/// Normal 95% quantile used for every interval.
inline constexpr double kZ95 = 1.96;

/// Mean and 1.96 * s / sqrt(n), s the n-1 sample standard deviation.
std::pair<double, double> confidence_interval(const std::vector<double>& accuracies);

struct EpisodeOutcome {
  double accuracy = 0.0;
  std::vector<std::string> warnings;
};

/// Fits and scores one method on one episode. Method-level numeric or data
/// failures are caught, flagged, and scored with the all-ties prediction.
EpisodeOutcome evaluate_episode(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode);

/// IMS (or the all-embeddings baseline) on one episode with the per-episode
/// seeds used by evaluate_episode.
ImsResult ims_episode(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode,
                      Warnings* warnings = nullptr);

/// One `ims-trace` document: stage-1 choices, stage-2 trace, final dim and
/// query accuracy of a single episode.
nlohmann::json ims_trace(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode);

/// Runs every episode of the protocol with `threads` workers. The report does
/// not depend on the worker count.
EvalReport run_evaluation(const EmbeddingDataset& dataset, const MethodSpec& method, const EpisodeConfig& episodes,
                          int threads = 1);

/// "DD.DD% ± D.DD%" with round-half-even to two decimals.
std::string format_accuracy(double mean, double half_width);
std::string format_report(const EvalReport& report);

nlohmann::json to_json(const MethodSpec& method);
MethodSpec method_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvalReport& report, bool include_wall_time);
EvalReport report_from_json(const nlohmann::json& j);

/// Sorted keys, two-space indentation, floats printed with 17 significant
/// digits. Equal values always serialize to equal bytes.
std::string canonical_dump(const nlohmann::json& j);

/// Writes the canonical report. Wall time is left out unless requested since
/// it is the one field that differs between otherwise identical runs.
void write_report(const EvalReport& report, const std::filesystem::path& path, bool include_wall_time = false);
EvalReport read_report(const std::filesystem::path& path);

}  // namespace cdfsl
