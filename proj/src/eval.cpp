#include "cdfsl/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <set>
#include <thread>

namespace cdfsl {

namespace {

constexpr std::uint64_t kTagProbe = 0x9b0be;
constexpr std::uint64_t kTagGuess = 0x6e55;

struct KindName {
  MethodKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {MethodKind::linear, "linear"},
    {MethodKind::mean_centroid, "mean-centroid"},
    {MethodKind::cosine, "cosine"},
    {MethodKind::proto, "proto"},
    {MethodKind::matching, "matching"},
    {MethodKind::transductive_linear, "transductive-linear"},
    {MethodKind::ims, "ims"},
    {MethodKind::all_embeddings, "all-embeddings"},
    {MethodKind::random_baseline, "random-baseline"},
};

SupportSet support_block(const EmbeddingDataset& dataset, const LayerKey& layer, const Episode& episode) {
  return SupportSet{gather_rows(dataset.features(layer), episode.support), episode.support_labels, episode.ways()};
}

ProbMatrix run_method(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode,
                      Warnings& warnings) {
  const Seed probe_seed = derive_seed(episode.seed, kTagProbe);
  const int k = episode.ways();
  if (method.kind == MethodKind::random_baseline) {
    Rng rng(derive_seed(episode.seed, kTagGuess));
    ProbMatrix guess = ProbMatrix::Zero(static_cast<Eigen::Index>(episode.query.size()), k);
    for (Eigen::Index i = 0; i < guess.rows(); ++i) guess(i, static_cast<Eigen::Index>(rng.uniform_index(k))) = 1.0;
    return guess;
  }
  if (uses_library(method.kind)) return ims_episode(dataset, method, episode, &warnings).probs;

  const LayerKey layer = method.layer.value_or(dataset.layers().front());
  const SupportSet support = support_block(dataset, layer, episode);
  const FeatureMatrix query = gather_rows(dataset.features(layer), episode.query);
  switch (method.kind) {
    case MethodKind::linear:
      return predict_linear(fit_linear(support, method.train, probe_seed), query);
    case MethodKind::mean_centroid:
      return centroid_predict(support, query, Distance::negative_cosine, &warnings);
    case MethodKind::proto:
      return centroid_predict(support, query, Distance::squared_euclidean, &warnings);
    case MethodKind::cosine:
      return predict_cosine(fit_cosine(support, method.train, probe_seed, method.cosine_scale, &warnings), query,
                            &warnings);
    case MethodKind::matching:
      return matching_predict(support, query, &warnings);
    case MethodKind::transductive_linear: {
      auto [s, q] = transductive_standardize(support.features, query);
      const SupportSet adapted{std::move(s), support.labels, support.num_classes};
      return predict_linear(fit_linear(adapted, method.train, probe_seed), q);
    }
    default:
      break;
  }
  throw ConfigError("unhandled method kind " + to_string(method.kind));
}

}  // namespace

ImsResult ims_episode(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode,
                      Warnings* warnings) {
  const ModelLibrary library(dataset);
  const Seed probe_seed = derive_seed(episode.seed, kTagProbe);
  if (method.kind == MethodKind::all_embeddings) {
    return all_embeddings_classify(library, episode, method.train, probe_seed);
  }
  if (method.kind != MethodKind::ims) throw ConfigError("ims_episode needs method ims or all-embeddings");
  CvConfig cv = method.cv;
  cv.seed = derive_seed(episode.seed, method.cv.seed);
  return ims_classify(library, episode, cv, method.train, probe_seed, warnings);
}

nlohmann::json ims_trace(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode) {
  Warnings warnings;
  const ImsResult result = ims_episode(dataset, method, episode, &warnings);
  nlohmann::json stage1 = nlohmann::json::object();
  for (const auto& choice : result.selection.stage1) {
    stage1[choice.model_id] = {{"layer_index", choice.layer.layer_index}, {"cv_error", choice.cv_error}};
  }
  nlohmann::json stage2 = nlohmann::json::array();
  for (std::size_t i = 0; i < result.selection.selected.size(); ++i) {
    const auto& key = result.selection.selected[i];
    nlohmann::json entry = {{"model_id", key.model_id}, {"layer_index", key.layer_index}};
    if (i < result.selection.trace.size()) entry["cv_error"] = result.selection.trace[i];
    stage2.push_back(std::move(entry));
  }
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
  return {{"episode", episode.episode_index},
          {"seed", episode.seed},
          {"stage1", std::move(stage1)},
          {"stage2", std::move(stage2)},
          {"final_dim", result.final_dim},
          {"query_accuracy", accuracy(result.probs, episode.query_labels)},
          {"warnings", warnings}};
}

std::string to_string(MethodKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

MethodKind parse_method_kind(const std::string& text) {
  for (const auto& [k, name] : kKindNames) {
    if (text == name) return k;
  }
  std::string known;
  for (const auto& [k, name] : kKindNames) known += std::string(known.empty() ? "" : " | ") + name;
  throw ConfigError("unknown method '" + text + "' (" + known + ")");
}

bool uses_library(MethodKind kind) { return kind == MethodKind::ims || kind == MethodKind::all_embeddings; }

void MethodSpec::validate() const {
  train.validate();
  if (kind == MethodKind::ims) cv.validate();
  if (!(cosine_scale > 0)) throw ConfigError("cosine scale must be > 0");
}

std::pair<double, double> confidence_interval(const std::vector<double>& accuracies) {
  if (accuracies.size() < 2) throw ConfigError("confidence interval needs at least 2 values");
  const auto n = static_cast<double>(accuracies.size());
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  const double mean = sum / n;
  double ss = 0.0;
  for (double a : accuracies) ss += (a - mean) * (a - mean);
  const double stddev = std::sqrt(ss / (n - 1.0));
  return {mean, kZ95 * stddev / std::sqrt(n)};
}

EpisodeOutcome evaluate_episode(const EmbeddingDataset& dataset, const MethodSpec& method, const Episode& episode) {
  EpisodeOutcome out;
  Warnings raw;
  ProbMatrix probs;
  try {
    probs = run_method(dataset, method, episode, raw);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    raw.push_back(std::string("method failed (") + e.what() + "); scored with tie-break prediction");
    probs = ProbMatrix::Constant(static_cast<Eigen::Index>(episode.query.size()), episode.ways(),
                                 1.0 / episode.ways());
  }
  out.accuracy = accuracy(probs, episode.query_labels);
  std::set<std::string> seen;
  for (auto& w : raw) {
    if (seen.insert(w).second) out.warnings.push_back("episode " + std::to_string(episode.episode_index) + ": " + w);
  }
  return out;
}

EvalReport run_evaluation(const EmbeddingDataset& dataset, const MethodSpec& method, const EpisodeConfig& episodes,
                          int threads) {
  const auto start = std::chrono::steady_clock::now();
  method.validate();
  if (method.layer && !dataset.has_layer(*method.layer)) {
    throw ConfigError("dataset '" + dataset.name() + "' has no layer " + to_string(*method.layer));
  }
  if (method.kind == MethodKind::transductive_linear && episodes.ways * episodes.queries_per_class < 2) {
    throw ConfigError("transductive-linear needs at least 2 query items per episode");
  }

  EvalReport report;
  report.dataset = dataset.name();
  report.method = method;
  const bool single_layer = !uses_library(method.kind) && method.kind != MethodKind::random_baseline;
  if (single_layer && !report.method.layer) report.method.layer = dataset.layers().front();
  report.episodes = episodes;
  report.warnings = check_feasibility(dataset, episodes);
  if (method.kind == MethodKind::transductive_linear) {
    report.notes.push_back(
        "transductive_adaptation: features standardized with per-episode query statistics "
        "(feature-space analog of batch-norm transductive fine-tuning)");
  }

  const auto count = static_cast<std::size_t>(episodes.episodes);
  std::vector<EpisodeOutcome> outcomes(count);
  std::vector<std::exception_ptr> failures(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        const Episode ep = sample_episode(dataset, episodes, static_cast<int>(i));
        outcomes[i] = evaluate_episode(dataset, method, ep);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(threads, 1, static_cast<int>(count));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  for (auto& o : outcomes) {
    report.per_episode_accuracy.push_back(o.accuracy);
    for (auto& w : o.warnings) report.warnings.push_back(std::move(w));
  }
  if (count >= 2) {
    std::tie(report.mean, report.ci95) = confidence_interval(report.per_episode_accuracy);
  } else {
    report.mean = report.per_episode_accuracy.front();
    report.ci95 = 0.0;
  }
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

// Percent value rounded half-to-even at two decimals, as an integer count of
// hundredths. Binary noise below 1e-6 hundredths is snapped away first so that
// decimal ties such as 0.123450 are recognised as ties.
long long hundredths_of_percent(double fraction) {
  const double scaled = fraction * 10000.0;
  const double snapped = std::nearbyint(scaled * 1e6) / 1e6;
  const double floor = std::floor(snapped);
  const double diff = snapped - floor;
  auto base = static_cast<long long>(floor);
  if (diff > 0.5) return base + 1;
  if (diff < 0.5) return base;
  return base % 2 == 0 ? base : base + 1;
}

std::string percent(double fraction) {
  const long long h = hundredths_of_percent(fraction);
  const long long whole = h / 100;
  const long long frac = std::llabs(h % 100);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%lld.%02lld%%", (h < 0 && whole == 0) ? "-" : "", whole, frac);
  return buf;
}

}  // namespace

std::string format_accuracy(double mean, double half_width) { return percent(mean) + " ± " + percent(half_width); }

std::string format_report(const EvalReport& report) { return format_accuracy(report.mean, report.ci95); }

}  // namespace cdfsl
