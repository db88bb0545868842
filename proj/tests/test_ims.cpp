#include <set>

#include <doctest.h>

#include "cdfsl/ims.hpp"
#include "test_support.hpp"

using namespace cdfsl;

namespace {

SyntheticSpec two_model_spec() {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.items_per_class = 40;
  spec.dim = 16;
  spec.class_separation = 6.0;
  spec.layers = {{"good", 0, LayerKind::pure_noise, 16},
                 {"good", 1, LayerKind::informative, 0},
                 {"noise", 0, LayerKind::pure_noise, 16},
                 {"noise", 1, LayerKind::pure_noise, 16}};
  return spec;
}

CvConfig quick_cv(Seed seed) {
  CvConfig cfg;
  cfg.seed = seed;
  return cfg;
}

// Adds a layer to a dataset by copying all existing ones.
EmbeddingDataset with_layer(const EmbeddingDataset& ds, const LayerKey& key, FeatureMatrix block) {
  std::map<LayerKey, FeatureMatrix> f;
  auto order = ds.layers();
  for (const auto& k : order) f[k] = ds.features(k);
  f[key] = std::move(block);
  order.push_back(key);
  return EmbeddingDataset(ds.name(), ds.labels(), order, f);
}

FeatureMatrix one_hot_block(const EmbeddingDataset& ds, int classes) {
  FeatureMatrix f = FeatureMatrix::Zero(static_cast<Eigen::Index>(ds.num_items()), classes);
  for (std::size_t i = 0; i < ds.num_items(); ++i) f(static_cast<Eigen::Index>(i), ds.label(i)) = 1.0f;
  return f;
}

}  // namespace

TEST_SUITE("ims") {
  TEST_CASE("concat_features") {
    std::map<LayerKey, FeatureMatrix> rows;
    rows[{"a", 0}] = FeatureMatrix::Constant(2, 3, 1.0f);
    rows[{"b", 0}] = FeatureMatrix::Constant(2, 5, 2.0f);
    CHECK(concat_features({{"a", 0}}, rows) == rows[{"a", 0}]);
    const auto both = concat_features({{"a", 0}, {"b", 0}}, rows);
    CHECK(both.cols() == 8);
    CHECK(both.leftCols(3) == rows[{"a", 0}]);
    CHECK(both.rightCols(5) == rows[{"b", 0}]);
    const auto swapped = concat_features({{"b", 0}, {"a", 0}}, rows);
    CHECK(swapped.leftCols(5) == rows[{"b", 0}]);
    CHECK_THROWS_AS(concat_features({{"c", 0}}, rows), DataError);
    rows[{"c", 0}] = FeatureMatrix::Zero(3, 1);
    CHECK_THROWS_AS(concat_features({{"a", 0}, {"c", 0}}, rows), DataError);
  }

  TEST_CASE("stratified folds partition every class") {
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 7; ++i) labels.push_back(c);
    const auto plan = stratified_folds(labels, 4, 5, 3);
    CHECK(plan.folds == 5);
    CHECK_FALSE(plan.warning.has_value());
    for (int c = 0; c < 4; ++c) {
      std::vector<int> per_fold(5, 0);
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == c) ++per_fold[static_cast<std::size_t>(plan.fold_of[i])];
      for (int n : per_fold) CHECK((n == 1 || n == 2));
    }
    CHECK(stratified_folds(labels, 4, 5, 3).fold_of == plan.fold_of);

    const std::vector<int> small{0, 0, 0, 1, 1, 1};
    const auto reduced = stratified_folds(small, 2, 5, 1);
    CHECK(reduced.folds == 3);
    CHECK(reduced.warning.has_value());
    CHECK_THROWS_AS(stratified_folds({0, 1, 1}, 2, 5, 1), ConfigError);
  }

  TEST_CASE("cv_error on one-hot class features is zero") {
    const SyntheticSpec spec = two_model_spec();
    const auto base = generate_synthetic(spec, 1);
    const auto ds = with_layer(base, {"oracle", 0}, one_hot_block(base, 5));
    const ModelLibrary lib(ds, {"oracle"});
    for (int e = 0; e < 5; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 17}, e);
      const auto support = LayeredSupport::from_episode(lib, ep);
      CHECK(cv_error(support, {{"oracle", 0}}, quick_cv(static_cast<Seed>(e))) == 0.0);
    }
  }

  TEST_CASE("cv_error on pure noise is near chance") {
    const SyntheticSpec spec = two_model_spec();
    const auto ds = generate_synthetic(spec, 2);
    const ModelLibrary lib(ds, {"noise"});
    double total = 0.0;
    for (int e = 0; e < 50; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 23}, e);
      const auto support = LayeredSupport::from_episode(lib, ep);
      const double err = cv_error(support, {{"noise", 0}}, quick_cv(static_cast<Seed>(e)));
      CHECK(err >= 0.0);
      CHECK(err <= 1.0);
      CHECK(cv_error(support, {{"noise", 0}}, quick_cv(static_cast<Seed>(e))) == err);
      total += err;
    }
    CHECK(std::abs(total / 50.0 - 0.8) < 0.1);
  }

  TEST_CASE("stage 1 picks the informative layer") {
    const auto ds = generate_synthetic(two_model_spec(), 3);
    const ModelLibrary lib(ds, {"good"});
    const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 5}, 0);
    const auto support = LayeredSupport::from_episode(lib, ep);
    const auto cfg = quick_cv(9);
    const auto choice = stage1_select(lib, support, cfg);
    REQUIRE(choice.size() == 1);
    CHECK(choice.front().layer == LayerKey{"good", 1});
    // brute force both errors
    const double e0 = cv_error(support, {{"good", 0}}, cfg);
    const double e1 = cv_error(support, {{"good", 1}}, cfg);
    CHECK(e1 < e0);
    CHECK(choice.front().cv_error == e1);
  }

  TEST_CASE("stage 1 single layer and tie rule") {
    const auto base = generate_synthetic(two_model_spec(), 4);
    SUBCASE("single layer is forced") {
      std::map<LayerKey, FeatureMatrix> f{{{"solo", 0}, base.features({"noise", 0})}};
      const EmbeddingDataset ds("solo", base.labels(), {{"solo", 0}}, f);
      const ModelLibrary lib(ds);
      const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 5}, 0);
      const auto choice = stage1_select(lib, LayeredSupport::from_episode(lib, ep), quick_cv(1));
      CHECK(choice.front().layer == LayerKey{"solo", 0});
      const auto sel = stage2_select(choice, LayeredSupport::from_episode(lib, ep), quick_cv(1));
      CHECK(sel.selected == std::vector<LayerKey>{{"solo", 0}});
    }
    SUBCASE("identical layers keep the lower index") {
      const auto& block = base.features({"good", 1});
      std::map<LayerKey, FeatureMatrix> f{{{"twin", 3}, block}, {{"twin", 7}, block}};
      const EmbeddingDataset ds("twin", base.labels(), {{"twin", 7}, {"twin", 3}}, f);
      const ModelLibrary lib(ds);
      for (int e = 0; e < 5; ++e) {
        const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 5}, e);
        const auto choice = stage1_select(lib, LayeredSupport::from_episode(lib, ep), quick_cv(1));
        CHECK(choice.front().layer == LayerKey{"twin", 3});
      }
    }
  }

  TEST_CASE("stage 2 excludes the pure-noise layer") {
    const auto ds = generate_synthetic(two_model_spec(), 5);
    const ModelLibrary lib(ds);
    int excluded = 0;
    for (int e = 0; e < 50; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 31}, e);
      const auto support = LayeredSupport::from_episode(lib, ep);
      const auto cfg = quick_cv(static_cast<Seed>(e));
      const std::vector<Stage1Choice> i1{{"good", {"good", 1}, cv_error(support, {{"good", 1}}, cfg)},
                                         {"noise", {"noise", 0}, cv_error(support, {{"noise", 0}}, cfg)}};
      const auto sel = stage2_select(i1, support, cfg);
      CHECK(sel.selected.front() == LayerKey{"good", 1});
      // brute force: B is kept exactly when the pair strictly beats A alone
      const double pair = cv_error(support, {{"good", 1}, {"noise", 0}}, cfg);
      const bool keep = pair < i1[0].cv_error;
      CHECK(sel.selected.size() == (keep ? 2u : 1u));
      for (std::size_t i = 1; i < sel.trace.size(); ++i) CHECK(sel.trace[i] < sel.trace[i - 1]);
      excluded += keep ? 0 : 1;
    }
    CHECK(excluded >= 45);
  }

  TEST_CASE("stage 2 excludes an exact duplicate of the best layer") {
    const auto base = generate_synthetic(two_model_spec(), 6);
    const auto onehot = one_hot_block(base, 5);
    const auto ds = with_layer(with_layer(base, {"copy", 0}, onehot), {"orig", 0}, onehot);
    const ModelLibrary lib(ds, {"orig", "copy"});
    for (int e = 0; e < 10; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 10, 5, 1, 37}, e);
      const auto support = LayeredSupport::from_episode(lib, ep);
      const auto cfg = quick_cv(static_cast<Seed>(e));
      const auto stage1 = stage1_select(lib, support, cfg);
      const auto sel = stage2_select(stage1, support, cfg);
      CHECK(sel.selected == std::vector<LayerKey>{{"orig", 0}});
      // oracle: the concatenated duplicate does no better
      CHECK(cv_error(support, {{"orig", 0}, {"copy", 0}}, cfg) >= cv_error(support, {{"orig", 0}}, cfg));
    }
  }

  TEST_CASE("one model, one layer collapses to the plain probe") {
    const auto base = generate_synthetic(two_model_spec(), 7);
    std::map<LayerKey, FeatureMatrix> f{{{"only", 0}, base.features({"good", 1})}};
    const EmbeddingDataset ds("only", base.labels(), {{"only", 0}}, f);
    const ModelLibrary lib(ds);
    for (int e = 0; e < 5; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 5, 15, 1, 41}, e);
      const auto result = ims_classify(lib, ep, quick_cv(3), TrainConfig{}, 99);
      const SupportSet s{gather_rows(ds.features({"only", 0}), ep.support), ep.support_labels, 5};
      const auto plain = predict_linear(fit_linear(s, TrainConfig{}, 99), gather_rows(ds.features({"only", 0}), ep.query));
      CHECK((result.probs - plain).cwiseAbs().maxCoeff() <= 1e-6);
      CHECK(result.final_dim == 16);
    }
  }

  TEST_CASE("ims is deterministic and beats a noise-only probe") {
    const auto ds = generate_synthetic(two_model_spec(), 8);
    const ModelLibrary lib(ds);
    int wins = 0;
    for (int e = 0; e < 20; ++e) {
      const auto ep = sample_episode(ds, EpisodeConfig{5, 5, 15, 1, 43}, e);
      Warnings w;
      const auto a = ims_classify(lib, ep, quick_cv(e), TrainConfig{}, 5, &w);
      const auto b = ims_classify(lib, ep, quick_cv(e), TrainConfig{}, 5);
      CHECK(a.selection.selected == b.selection.selected);
      CHECK(a.probs == b.probs);
      const SupportSet noise{gather_rows(ds.features({"noise", 0}), ep.support), ep.support_labels, 5};
      const auto noise_probs =
          predict_linear(fit_linear(noise, TrainConfig{}, 5), gather_rows(ds.features({"noise", 0}), ep.query));
      wins += accuracy(a.probs, ep.query_labels) >= accuracy(noise_probs, ep.query_labels) ? 1 : 0;
    }
    CHECK(wins >= 19);
  }

  TEST_CASE("all-embeddings uses every layer") {
    const auto ds = generate_synthetic(two_model_spec(), 9);
    const ModelLibrary lib(ds);
    const auto ep = sample_episode(ds, EpisodeConfig{5, 5, 15, 1, 47}, 0);
    const auto r = all_embeddings_classify(lib, ep, TrainConfig{}, 1);
    CHECK(r.final_dim == 64);
    CHECK(r.selection.selected.size() == 4);
  }

  TEST_CASE("library construction") {
    const auto ds = generate_synthetic(two_model_spec(), 10);
    CHECK(ModelLibrary(ds).sources() == std::vector<std::string>{"good", "noise"});
    CHECK_THROWS_AS(ModelLibrary(ds, {"missing"}), ConfigError);
    CHECK_THROWS_AS(ModelLibrary(ds, {"good", "good"}), ConfigError);
    CHECK(ModelLibrary(ds).all_layers().size() == 4);
  }
}
