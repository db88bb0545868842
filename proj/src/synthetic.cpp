#include <set>

#include "cdfsl/dataio.hpp"

namespace cdfsl {

namespace {

// Stream tags; every random component draws from its own derived seed so that
// changing one knob (e.g. shift_level) leaves the other draws untouched.
constexpr std::uint64_t kTagRotation = 1;
constexpr std::uint64_t kTagTranslation = 2;
constexpr std::uint64_t kTagLatent = 3;
constexpr std::uint64_t kTagLayerNoise = 100;
constexpr std::uint64_t kTagProjection = 200;

RowMatrix<double> gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  RowMatrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Q factor with positive diagonal in R, which makes it unique.
Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& a) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

// Rows span the orthogonal complement of the all-ones vector (Helmert basis).
Eigen::MatrixXd helmert_basis(int k) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k - 1, k);
  for (int r = 1; r < k; ++r) {
    const double norm = std::sqrt(static_cast<double>(r) * (r + 1));
    h.row(r - 1).head(r).setConstant(1.0 / norm);
    h(r - 1, r) = -static_cast<double>(r) / norm;
  }
  return h;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::informative: return "informative";
    case LayerKind::pure_noise: return "pure-noise";
    case LayerKind::random_projection: return "random-projection";
  }
  return "unknown";
}

LayerKind parse_layer_kind(const std::string& text) {
  if (text == "informative") return LayerKind::informative;
  if (text == "pure-noise") return LayerKind::pure_noise;
  if (text == "random-projection") return LayerKind::random_projection;
  throw ConfigError("unknown layer kind '" + text + "' (informative | pure-noise | random-projection)");
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (items_per_class < 1) throw ConfigError("synthetic: items_per_class must be >= 1");
  if (dim < 1) throw ConfigError("synthetic: dim must be >= 1");
  if (dim < num_classes - 1) {
    throw ConfigError("synthetic: dim must be >= num_classes - 1 to place equidistant class means");
  }
  if (!(noise_sigma > 0) || !std::isfinite(noise_sigma)) throw ConfigError("synthetic: noise_sigma must be > 0");
  if (!(class_separation >= 0) || !std::isfinite(class_separation)) {
    throw ConfigError("synthetic: class_separation must be >= 0");
  }
  if (!(shift_level >= 0) || !std::isfinite(shift_level)) throw ConfigError("synthetic: shift_level must be >= 0");
  if (layers.empty()) throw ConfigError("synthetic: at least one layer is required");
  std::set<LayerKey> keys;
  for (const auto& layer : layers) {
    if (layer.layer_index < 0 || layer.dim < 0) throw ConfigError("synthetic: negative layer index or dim");
    if (layer.model_id.empty()) throw ConfigError("synthetic: empty model id");
    if (!keys.insert(LayerKey{layer.model_id, layer.layer_index}).second) {
      throw ConfigError("synthetic: duplicate layer " + layer.model_id + ":" + std::to_string(layer.layer_index));
    }
  }
}

RowMatrix<double> simplex_means(const SyntheticSpec& spec) {
  spec.validate();
  const int k = spec.num_classes;
  RowMatrix<double> means = RowMatrix<double>::Zero(k, spec.dim);
  // Columns of the Helmert basis are centred simplex vertices at distance sqrt(2).
  means.leftCols(k - 1) = helmert_basis(k).transpose() * (spec.class_separation / std::numbers::sqrt2);
  return means;
}

RowMatrix<double> shifted_means(const SyntheticSpec& spec, Seed seed) {
  RowMatrix<double> means = simplex_means(spec);
  if (spec.shift_level == 0.0) return means;
  const Eigen::Index d = spec.dim;

  Rng rot_rng(derive_seed(seed, kTagRotation));
  const Eigen::MatrixXd target = orthonormalize(gaussian_matrix(rot_rng, d, d));
  const double blend = spec.shift_level / (1.0 + spec.shift_level);
  const Eigen::MatrixXd rotation =
      orthonormalize((1.0 - blend) * Eigen::MatrixXd::Identity(d, d) + blend * target);

  Rng shift_rng(derive_seed(seed, kTagTranslation));
  Eigen::RowVectorXd direction = gaussian_matrix(shift_rng, 1, d);
  direction.normalize();

  means = (means * rotation.transpose()).eval();
  means.rowwise() += spec.shift_level * direction;
  return means;
}

EmbeddingDataset generate_synthetic(const SyntheticSpec& spec, Seed seed) {
  spec.validate();
  const RowMatrix<double> means = shifted_means(spec, seed);
  const Eigen::Index n = static_cast<Eigen::Index>(spec.num_classes) * spec.items_per_class;

  std::vector<ClassId> labels(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) labels[i] = static_cast<ClassId>(i / spec.items_per_class);

  const auto informative_draw = [&](Seed stream) {
    Rng rng(stream);
    RowMatrix<double> x(n, spec.dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < spec.dim; ++j) x(i, j) = means(labels[i], j) + spec.noise_sigma * rng.normal();
    }
    return x;
  };

  RowMatrix<double> latent;
  std::vector<LayerKey> order;
  std::map<LayerKey, FeatureMatrix> features;
  for (std::size_t pos = 0; pos < spec.layers.size(); ++pos) {
    const auto& layer = spec.layers[pos];
    const Eigen::Index width = layer.dim > 0 ? layer.dim : spec.dim;
    RowMatrix<double> values;
    switch (layer.kind) {
      case LayerKind::informative:
        if (width != spec.dim) throw ConfigError("synthetic: informative layers must have width dim");
        values = informative_draw(derive_seed(seed, kTagLayerNoise + pos));
        break;
      case LayerKind::pure_noise: {
        Rng rng(derive_seed(seed, kTagLayerNoise + pos));
        values = spec.noise_sigma * gaussian_matrix(rng, n, width);
        break;
      }
      case LayerKind::random_projection: {
        if (latent.size() == 0) latent = informative_draw(derive_seed(seed, kTagLatent));
        Rng rng(derive_seed(seed, kTagProjection + pos));
        const RowMatrix<double> projection =
            gaussian_matrix(rng, width, spec.dim) / std::sqrt(static_cast<double>(spec.dim));
        values = latent * projection.transpose();
        break;
      }
    }
    LayerKey key{layer.model_id, layer.layer_index};
    order.push_back(key);
    features.emplace(std::move(key), values.cast<float>());
  }
  return EmbeddingDataset("synthetic", std::move(labels), std::move(order), std::move(features));
}

double bayes_accuracy(const SyntheticSpec& spec) {
  spec.validate();
  const int k = spec.num_classes;
  if (spec.class_separation == 0.0) return 1.0 / k;
  const double ratio = spec.class_separation / spec.noise_sigma;
  if (k == 2) return normal_cdf(ratio / 2.0);

  // Equal isotropic covariance: Bayes rule is nearest mean, and by symmetry the
  // accuracy for class 0 is the overall accuracy. Work in the (k-1)-dim span.
  const Eigen::MatrixXd vertices = helmert_basis(k) * (ratio / std::numbers::sqrt2);  // (k-1) x k
  Rng rng(kBayesSeed);
  Eigen::VectorXd z(k - 1);
  long correct = 0;
  for (int s = 0; s < kBayesSamples; ++s) {
    for (int j = 0; j < k - 1; ++j) z(j) = rng.normal();
    // x = v0 + z; class 0 wins iff |z|^2 < |z + v0 - vj|^2 for all j != 0
    const double own = z.squaredNorm();
    bool win = true;
    for (int j = 1; j < k && win; ++j) {
      win = own < (z + vertices.col(0) - vertices.col(j)).squaredNorm();
    }
    correct += win ? 1 : 0;
  }
  return static_cast<double>(correct) / kBayesSamples;
}

}  // namespace cdfsl
