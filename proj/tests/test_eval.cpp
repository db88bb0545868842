#include <doctest.h>

#include "cdfsl/eval.hpp"
#include "test_support.hpp"

using namespace cdfsl;
using cdfsl::testing::TempDir;

namespace {

EmbeddingDataset blob_dataset(double separation, Seed seed = 1) {
  SyntheticSpec spec;
  spec.num_classes = 6;
  spec.items_per_class = 30;
  spec.dim = 12;
  spec.class_separation = separation;
  return generate_synthetic(spec, seed);
}

MethodSpec method(MethodKind kind) {
  MethodSpec m;
  m.kind = kind;
  return m;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("confidence interval arithmetic") {
    const std::vector<double> flat(600, 0.8);
    const auto [m0, h0] = confidence_interval(flat);
    CHECK(m0 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(h0 == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<double> alternating;
    for (int i = 0; i < 600; ++i) alternating.push_back(i % 2);
    const auto [m1, h1] = confidence_interval(alternating);
    CHECK(m1 == 0.5);
    // s = sqrt(600 * 0.25 / 599)
    const double s = std::sqrt(150.0 / 599.0);
    CHECK(s == doctest::Approx(0.50042).epsilon(1e-5));
    CHECK(h1 == doctest::Approx(1.96 * s / std::sqrt(600.0)).epsilon(1e-12));
    CHECK(std::abs(h1 - 0.04004) < 0.0002);
    CHECK(format_accuracy(m1, h1) == "50.00% ± 4.00%");
    CHECK_THROWS_AS(confidence_interval({0.5}), ConfigError);
  }

  TEST_CASE("accuracy formatting") {
    CHECK(format_accuracy(0.7329, 0.0071) == "73.29% ± 0.71%");
    CHECK(format_accuracy(1.0, 0.0) == "100.00% ± 0.00%");
    CHECK(format_accuracy(0.20049, 0.004996) == "20.05% ± 0.50%");
    // decimal ties round to even
    CHECK(format_accuracy(0.123450, 0.001250) == "12.34% ± 0.12%");
    CHECK(format_accuracy(0.123550, 0.001350) == "12.36% ± 0.14%");
    CHECK(format_accuracy(0.0, 0.0) == "0.00% ± 0.00%");
  }

  TEST_CASE("method names round-trip") {
    for (const char* name : {"linear", "mean-centroid", "cosine", "proto", "matching", "transductive-linear", "ims",
                             "all-embeddings", "random-baseline"}) {
      CHECK(to_string(parse_method_kind(name)) == name);
    }
    CHECK_THROWS_AS(parse_method_kind("knn"), ConfigError);
  }

  TEST_CASE("well separated data scores 100%") {
    const auto ds = blob_dataset(40.0);
    const auto report = run_evaluation(ds, method(MethodKind::mean_centroid), EpisodeConfig{5, 5, 15, 50, 3});
    CHECK(format_report(report) == "100.00% ± 0.00%");
    CHECK(report.per_episode_accuracy.size() == 50);
    CHECK(report.method.layer == LayerKey{"m0", 0});
  }

  TEST_CASE("random baseline sits at chance") {
    const auto ds = blob_dataset(40.0);
    const auto report = run_evaluation(ds, method(MethodKind::random_baseline), EpisodeConfig{5, 5, 15, 600, 11});
    CHECK(std::abs(report.mean - 0.2) <= 3 * report.ci95);
  }

  TEST_CASE("every method kind runs") {
    const auto ds = blob_dataset(6.0);
    const EpisodeConfig cfg{5, 5, 10, 4, 2};
    for (auto kind : {MethodKind::linear, MethodKind::mean_centroid, MethodKind::cosine, MethodKind::proto,
                      MethodKind::matching, MethodKind::transductive_linear, MethodKind::ims,
                      MethodKind::all_embeddings, MethodKind::random_baseline}) {
      CAPTURE(to_string(kind));
      const auto r = run_evaluation(ds, method(kind), cfg);
      CHECK(r.per_episode_accuracy.size() == 4);
      CHECK(r.mean >= 0.0);
      CHECK(r.mean <= 1.0);
      if (kind != MethodKind::random_baseline) CHECK(r.mean > 0.6);
      if (kind == MethodKind::transductive_linear) CHECK(r.notes.size() == 1);
    }
  }

  TEST_CASE("report is independent of worker count") {
    const auto ds = blob_dataset(3.0);
    const EpisodeConfig cfg{5, 5, 15, 24, 7};
    const auto one = run_evaluation(ds, method(MethodKind::linear), cfg, 1);
    const auto many = run_evaluation(ds, method(MethodKind::linear), cfg, 8);
    CHECK(canonical_dump(to_json(one, false)) == canonical_dump(to_json(many, false)));
  }

  TEST_CASE("report files") {
    const auto ds = blob_dataset(3.0);
    TempDir dir("report");
    auto report = run_evaluation(ds, method(MethodKind::proto), EpisodeConfig{5, 2, 3, 8, 13});
    report.warnings.push_back("episode 3: zero-norm query row 0 in mean-centroid; similarity set to 0");
    report.warnings.push_back("ünïcode \"quoted\" warning");
    write_report(report, dir / "a.json");
    write_report(report, dir / "b.json");
    CHECK(cdfsl::testing::slurp(dir / "a.json") == cdfsl::testing::slurp(dir / "b.json"));
    CHECK(cdfsl::testing::slurp(dir / "a.json").find("wall_time") == std::string::npos);

    const auto back = read_report(dir / "a.json");
    CHECK(back.dataset == report.dataset);
    CHECK(back.per_episode_accuracy == report.per_episode_accuracy);
    CHECK(back.mean == report.mean);
    CHECK(back.ci95 == report.ci95);
    CHECK(back.warnings == report.warnings);
    CHECK(back.episodes.master_seed == 13);
    CHECK(back.method.kind == MethodKind::proto);
    CHECK(back.method.layer == report.method.layer);

    write_report(report, dir / "timed.json", true);
    CHECK(cdfsl::testing::slurp(dir / "timed.json").find("wall_time_seconds") != std::string::npos);
  }

  TEST_CASE("canonical dump sorts keys and keeps full precision") {
    const nlohmann::json j = {{"b", 0.1}, {"a", {1, 2}}, {"c", "x"}};
    const std::string text = canonical_dump(j);
    CHECK(text.find("\"a\"") < text.find("\"b\""));
    CHECK(text.find("0.10000000000000001") != std::string::npos);
    CHECK(nlohmann::json::parse(text)["b"].get<double>() == 0.1);
  }

  TEST_CASE("infeasible and invalid configurations") {
    const auto ds = blob_dataset(3.0);
    CHECK_THROWS_AS(run_evaluation(ds, method(MethodKind::linear), EpisodeConfig{7, 5, 15, 2, 0}), DataError);
    auto m = method(MethodKind::linear);
    m.layer = LayerKey{"m9", 0};
    CHECK_THROWS_AS(run_evaluation(ds, m, EpisodeConfig{5, 5, 15, 2, 0}), ConfigError);
    m = method(MethodKind::ims);
    m.cv.folds = 1;
    CHECK_THROWS_AS(run_evaluation(ds, m, EpisodeConfig{5, 5, 15, 2, 0}), ConfigError);
  }

  TEST_CASE("zero-norm rows become warnings in an evaluation") {
    auto labels = std::vector<ClassId>{};
    FeatureMatrix f(20, 2);
    for (int i = 0; i < 20; ++i) {
      labels.push_back(static_cast<ClassId>(i / 10));
      f(i, 0) = i < 10 ? 1.0f : 0.0f;
      f(i, 1) = i < 10 ? 0.0f : 1.0f;
    }
    f.row(5).setZero();
    const EmbeddingDataset ds("zeros", labels, {{"m", 0}}, {{{"m", 0}, f}});
    const auto r = run_evaluation(ds, method(MethodKind::mean_centroid), EpisodeConfig{2, 1, 9, 10, 0});
    CHECK_FALSE(r.warnings.empty());
    for (const auto& w : r.warnings) CHECK(w.rfind("episode ", 0) == 0);
  }
}
