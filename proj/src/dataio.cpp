#include "cdfsl/dataio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cdfsl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic{'F', 'S', 'L', 'B'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 + 8 + 4;

template <typename T>
T read_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

template <typename T>
void append_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::vector<unsigned char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError(path.string() + ": read failure");
  return bytes;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw DataError(path.string() + ": write failure");
}

std::vector<ClassId> read_labels(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0) {
    throw DataError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  }
  std::vector<ClassId> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = read_le<std::uint32_t>(&bytes[4 * i]);
  return labels;
}

struct LayerBlob {
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
  FeatureMatrix values;
};

LayerBlob read_layer(const fs::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.string();
  if (bytes.size() < kHeaderBytes) throw DataError(where + ": offset 0: truncated header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw DataError(where + ": offset 0: bad magic");
  const auto version = read_le<std::uint32_t>(&bytes[4]);
  if (version != kFormatVersion) {
    throw DataError(where + ": offset 4: unsupported version " + std::to_string(version));
  }
  LayerBlob blob;
  blob.count = read_le<std::uint64_t>(&bytes[8]);
  blob.dim = read_le<std::uint32_t>(&bytes[16]);
  const std::uint64_t expected = kHeaderBytes + blob.count * blob.dim * 4;
  if (bytes.size() != expected) {
    throw DataError(where + ": offset " + std::to_string(std::min<std::uint64_t>(bytes.size(), expected)) +
                    ": payload size " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected " +
                    std::to_string(expected - kHeaderBytes));
  }
  blob.values.resize(static_cast<Eigen::Index>(blob.count), static_cast<Eigen::Index>(blob.dim));
  float* dst = blob.values.data();
  for (std::uint64_t k = 0; k < blob.count * blob.dim; ++k) {
    const std::size_t offset = kHeaderBytes + 4 * k;
    const float v = std::bit_cast<float>(read_le<std::uint32_t>(&bytes[offset]));
    if (!std::isfinite(v)) throw DataError(where + ": offset " + std::to_string(offset) + ": non-finite value");
    dst[k] = v;
  }
  return blob;
}

std::string encode_layer(const FeatureMatrix& values) {
  std::string out(kMagic.begin(), kMagic.end());
  append_le<std::uint32_t>(out, kFormatVersion);
  append_le<std::uint64_t>(out, static_cast<std::uint64_t>(values.rows()));
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(values.cols()));
  out.reserve(out.size() + 4 * static_cast<std::size_t>(values.size()));
  const float* src = values.data();
  for (Eigen::Index k = 0; k < values.size(); ++k) append_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(src[k]));
  return out;
}

}  // namespace

std::string to_string(const LayerKey& key) { return key.model_id + ":" + std::to_string(key.layer_index); }

LayerKey parse_layer_key(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("layer key '" + text + "' must look like model:index");
  }
  LayerKey key{text.substr(0, colon), 0};
  try {
    std::size_t used = 0;
    key.layer_index = std::stoi(text.substr(colon + 1), &used);
    if (used != text.size() - colon - 1 || key.layer_index < 0) throw std::invalid_argument("bad index");
  } catch (const std::exception&) {
    throw ConfigError("layer key '" + text + "' has an invalid layer index");
  }
  return key;
}

EmbeddingDataset::EmbeddingDataset(std::string name, std::vector<ClassId> labels,
                                   std::vector<LayerKey> layer_order, std::map<LayerKey, FeatureMatrix> features)
    : name_(std::move(name)),
      labels_(std::move(labels)),
      layer_order_(std::move(layer_order)),
      features_(std::move(features)) {
  if (labels_.empty()) throw DataError("dataset '" + name_ + "' has no items");
  if (layer_order_.size() != features_.size()) throw DataError("dataset '" + name_ + "': layer order/feature mismatch");
  std::set<LayerKey> seen;
  for (const auto& key : layer_order_) {
    if (!seen.insert(key).second) throw DataError("duplicate layer " + to_string(key));
    const auto it = features_.find(key);
    if (it == features_.end()) throw DataError("layer " + to_string(key) + " has no feature matrix");
    const auto& m = it->second;
    if (static_cast<std::size_t>(m.rows()) != labels_.size()) {
      throw DataError("layer " + to_string(key) + " has " + std::to_string(m.rows()) + " rows, expected " +
                      std::to_string(labels_.size()));
    }
    if (m.cols() < 1) throw DataError("layer " + to_string(key) + " has zero width");
    if (!m.allFinite()) throw DataError("layer " + to_string(key) + " contains non-finite values");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) class_index_[labels_[i]].push_back(i);
}

std::vector<std::string> EmbeddingDataset::models() const {
  std::vector<std::string> out;
  for (const auto& key : layer_order_) {
    if (std::find(out.begin(), out.end(), key.model_id) == out.end()) out.push_back(key.model_id);
  }
  return out;
}

std::vector<LayerKey> EmbeddingDataset::layers_of(const std::string& model_id) const {
  std::vector<LayerKey> out;
  for (const auto& key : layer_order_) {
    if (key.model_id == model_id) out.push_back(key);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const FeatureMatrix& EmbeddingDataset::features(const LayerKey& key) const {
  const auto it = features_.find(key);
  if (it == features_.end()) throw DataError("dataset '" + name_ + "' has no layer " + to_string(key));
  return it->second;
}

EmbeddingDataset load_dataset(const fs::path& path) {
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  const std::string where = manifest_path.string();
  if (!fs::exists(manifest_path)) throw DataError(where + ": manifest not found");
  const auto raw = read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw DataError(where + ": invalid JSON: " + e.what());
  }
  const fs::path base = manifest_path.parent_path();

  try {
    const int version = manifest.at("version").get<int>();
    if (version != 1) throw DataError(where + ": unsupported manifest version " + std::to_string(version));
    const auto num_items = manifest.at("num_items").get<std::uint64_t>();
    const fs::path labels_path = base / manifest.at("labels_file").get<std::string>();
    auto labels = read_labels(labels_path);

    std::vector<LayerKey> order;
    std::map<LayerKey, FeatureMatrix> features;
    for (const auto& model : manifest.at("models")) {
      const auto model_id = model.at("model_id").get<std::string>();
      const auto& layers = model.at("layers");
      const auto declared = model.contains("num_layers") ? model.at("num_layers").get<int>()
                                                         : static_cast<int>(layers.size());
      for (const auto& layer : layers) {
        LayerKey key{model_id, layer.at("layer_index").get<int>()};
        if (key.layer_index < 0 || key.layer_index >= declared) {
          throw DataError(where + ": layer " + to_string(key) + " exceeds declared layer count " +
                          std::to_string(declared));
        }
        if (features.contains(key)) throw DataError(where + ": duplicate layer " + to_string(key));
        const fs::path file = base / layer.at("file").get<std::string>();
        auto blob = read_layer(file);
        if (blob.count != labels.size()) {
          throw DataError("row-count mismatch: " + file.string() + " has " + std::to_string(blob.count) +
                          " rows but " + labels_path.string() + " has " + std::to_string(labels.size()) +
                          " entries");
        }
        if (layer.contains("shape")) {
          const auto shape = layer.at("shape").get<std::vector<std::int64_t>>();
          if (shape.size() != 3 || shape[0] < 1) throw DataError(where + ": layer " + to_string(key) + ": bad shape");
          if (static_cast<std::int64_t>(blob.dim) != shape[0] * shape[1] * shape[2]) {
            throw DataError(file.string() + ": offset 16: dim " + std::to_string(blob.dim) +
                            " disagrees with manifest shape");
          }
          if (shape[1] < 1 || shape[2] < 1) throw DataError(file.string() + ": empty spatial extent");
          FeatureMatrix pooled(blob.values.rows(), shape[0]);
          for (Eigen::Index i = 0; i < blob.values.rows(); ++i) {
            pooled.row(i) = global_average_pool(blob.values.row(i).data(), shape[0], shape[1], shape[2]).transpose();
          }
          blob.values = std::move(pooled);
        } else {
          const auto dim = layer.at("dim").get<std::uint64_t>();
          if (dim != blob.dim) {
            throw DataError(file.string() + ": offset 16: dim " + std::to_string(blob.dim) + " but manifest says " +
                            std::to_string(dim));
          }
        }
        order.push_back(key);
        features.emplace(std::move(key), std::move(blob.values));
      }
    }
    if (labels.size() != num_items) {
      throw DataError("row-count mismatch: " + where + " declares " + std::to_string(num_items) + " items but " +
                      labels_path.string() + " has " + std::to_string(labels.size()) + " entries");
    }
    if (order.empty()) throw DataError(where + ": no layers declared");
    return EmbeddingDataset(where, std::move(labels),
                            std::move(order), std::move(features));
  } catch (const json::exception& e) {
    throw DataError(where + ": malformed manifest: " + e.what());
  }
}

void write_dataset(const EmbeddingDataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError(dir.string() + ": cannot create directory: " + ec.message());

  std::vector<fs::path> written;
  const auto cleanup = [&] {
    for (const auto& p : written) fs::remove(p, ec);
  };
  try {
    std::string labels;
    for (ClassId c : dataset.labels()) append_le<std::uint32_t>(labels, c);
    written.push_back(dir / "labels.bin");
    write_file(written.back(), labels);

    json models = json::array();
    std::size_t file_no = 0;
    for (const auto& model_id : dataset.models()) {
      json layers = json::array();
      for (const auto& key : dataset.layers()) {
        if (key.model_id != model_id) continue;
        const std::string file = "layer_" + std::to_string(file_no++) + ".fslb";
        written.push_back(dir / file);
        write_file(written.back(), encode_layer(dataset.features(key)));
        layers.push_back({{"layer_index", key.layer_index}, {"dim", dataset.dim(key)}, {"file", file}});
      }
      models.push_back({{"model_id", model_id}, {"layers", std::move(layers)}});
    }
    const json manifest = {{"version", 1},
                           {"num_items", dataset.num_items()},
                           {"labels_file", "labels.bin"},
                           {"models", std::move(models)}};
    written.push_back(dir / "manifest.json.tmp");
    write_file(written.back(), manifest.dump(2) + "\n");
    fs::rename(written.back(), dir / "manifest.json", ec);
    if (ec) throw DataError((dir / "manifest.json").string() + ": " + ec.message());
  } catch (...) {
    cleanup();
    throw;
  }
}

}  // namespace cdfsl
