#include "cdfsl/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdfsl/eval.hpp"

namespace cdfsl {

namespace {

using nlohmann::json;

/// Reads a flat JSON object whose keys are flag names.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing JSON configuration is not supported");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json doc;
    try {
      doc = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConfigError(std::string("invalid JSON run configuration: ") + e.what());
    }
    if (!doc.is_object()) throw CLI::ConfigError("JSON run configuration must be an object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : doc.items()) {
      CLI::ConfigItem item;
      item.name = key;
      const auto scalar = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
    return items;
  }
};

struct TrainFlags {
  TrainConfig train;
  double cosine_scale = kDefaultCosineScale;
  int folds = 5;
  Seed cv_seed = 0;
};

void add_train_flags(CLI::App& app, TrainFlags& flags) {
  app.add_option("--epochs", flags.train.epochs, "Training epochs per probe")->capture_default_str();
  app.add_option("--lr", flags.train.learning_rate, "SGD learning rate")->capture_default_str();
  app.add_option("--momentum", flags.train.momentum, "SGD momentum")->capture_default_str();
  app.add_option("--batch-size", flags.train.batch_size, "Mini-batch size (0 = full support)")->capture_default_str();
  app.add_option("--weight-decay", flags.train.weight_decay, "L2 penalty on weights")->capture_default_str();
  app.add_option("--cosine-scale", flags.cosine_scale, "Logit scale of the cosine head")->capture_default_str();
  app.add_option("--folds", flags.folds, "Cross-validation folds for ims")->capture_default_str();
  app.add_option("--cv-seed", flags.cv_seed, "Fold-assignment seed tag for ims")->capture_default_str();
}

void add_episode_flags(CLI::App& app, EpisodeConfig& episodes, bool shots_required) {
  app.add_option("--ways", episodes.ways, "Classes per episode")->capture_default_str();
  auto* shots = app.add_option("--shots", episodes.shots, "Support items per class");
  if (shots_required) shots->required();
  app.add_option("--queries", episodes.queries_per_class, "Query items per class")->capture_default_str();
  app.add_option("--episodes", episodes.episodes, "Number of episodes")->capture_default_str();
  app.add_option("--seed", episodes.master_seed, "Master seed (default: $FSL_SEED, else 0)")->envname("FSL_SEED");
}

void attach_config(CLI::App& app, const std::vector<std::string>& args) {
  app.set_config("--config", "", "TOML or JSON run configuration; flags override its values");
  const auto it = std::find(args.begin(), args.end(), "--config");
  std::string path;
  if (it != args.end() && std::next(it) != args.end()) path = *std::next(it);
  for (const auto& a : args) {
    if (a.rfind("--config=", 0) == 0) path = a.substr(9);
  }
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") app.config_formatter(std::make_shared<JsonConfig>());
}

MethodSpec method_spec(MethodKind kind, const TrainFlags& flags, const std::string& layer) {
  MethodSpec method;
  method.kind = kind;
  method.train = flags.train;
  method.cosine_scale = flags.cosine_scale;
  method.cv.folds = flags.folds;
  method.cv.seed = flags.cv_seed;
  method.cv.probe = flags.train;
  if (!layer.empty()) method.layer = parse_layer_key(layer);
  return method;
}

std::vector<SyntheticLayer> parse_synthetic_layers(const std::string& text) {
  std::vector<SyntheticLayer> layers;
  std::stringstream list(text);
  std::string item;
  while (std::getline(list, item, ',')) {
    std::vector<std::string> parts;
    std::stringstream fields(item);
    std::string field;
    while (std::getline(fields, field, ':')) parts.push_back(field);
    if (parts.size() < 3 || parts.size() > 4) {
      throw ConfigError("layer '" + item + "' must look like model:index:kind[:dim]");
    }
    SyntheticLayer layer;
    layer.model_id = parts[0];
    try {
      layer.layer_index = std::stoi(parts[1]);
      if (parts.size() == 4) layer.dim = std::stoi(parts[3]);
    } catch (const std::exception&) {
      throw ConfigError("layer '" + item + "' has a non-numeric index or dim");
    }
    layer.kind = parse_layer_kind(parts[2]);
    layers.push_back(layer);
  }
  if (layers.empty()) throw ConfigError("--layers is empty");
  return layers;
}

int cmd_evaluate(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evaluate a few-shot method over seeded episodes", "cdfsl evaluate"};
  attach_config(app, args);
  std::string dataset_path, library_path, method_name, layer, output;
  EpisodeConfig episodes;
  TrainFlags flags;
  int threads = 1;
  bool record_timing = false;
  app.add_option("--dataset", dataset_path, "Dataset manifest (or its directory)");
  app.add_option("--library", library_path, "Multi-model library manifest for ims / all-embeddings");
  app.add_option("--method", method_name, "Method kind")->required();
  app.add_option("--layer", layer, "Layer for single-layer methods, model:index");
  add_episode_flags(app, episodes, true);
  add_train_flags(app, flags);
  app.add_option("--threads", threads, "Evaluation worker count")->capture_default_str();
  app.add_option("--output", output, "Write the canonical JSON report here");
  app.add_flag("--record-timing", record_timing, "Include wall_time_seconds in the report file");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  const MethodKind kind = parse_method_kind(method_name);
  std::string source = dataset_path;
  if (uses_library(kind)) {
    if (library_path.empty()) throw ConfigError("--library is required for method '" + method_name + "'");
    source = library_path;
  } else if (source.empty()) {
    throw ConfigError("--dataset is required for method '" + method_name + "'");
  }
  if (threads < 1) throw ConfigError("--threads must be >= 1");
  const MethodSpec method = method_spec(kind, flags, layer);
  method.validate();
  episodes.validate();

  const EmbeddingDataset dataset = load_dataset(source);
  const EvalReport report = run_evaluation(dataset, method, episodes, threads);
  out << format_report(report) << "\n";
  if (!report.warnings.empty()) {
    err << report.warnings.size() << " warning(s); first: " << report.warnings.front() << "\n";
  }
  if (!output.empty()) write_report(report, output, record_timing);
  return kExitOk;
}

int cmd_synth(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Generate a synthetic Gaussian-mixture embedding dataset", "cdfsl synth"};
  attach_config(app, args);
  SyntheticSpec spec;
  Seed seed = 0;
  std::string out_dir, layers;
  app.add_option("--classes", spec.num_classes, "Number of classes")->capture_default_str();
  app.add_option("--per-class", spec.items_per_class, "Items per class")->capture_default_str();
  app.add_option("--dim", spec.dim, "Feature width")->capture_default_str();
  app.add_option("--separation", spec.class_separation, "Distance between class means")->capture_default_str();
  app.add_option("--sigma", spec.noise_sigma, "Isotropic noise standard deviation")->capture_default_str();
  app.add_option("--shift", spec.shift_level, "Domain shift level")->capture_default_str();
  app.add_option("--layers", layers, "Comma list of model:index:kind[:dim] (default m0:0:informative)");
  app.add_option("--seed", seed, "Generator seed (default: $FSL_SEED, else 0)")->envname("FSL_SEED");
  app.add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (!layers.empty()) spec.layers = parse_synthetic_layers(layers);
  spec.validate();
  const EmbeddingDataset dataset = generate_synthetic(spec, seed);
  write_dataset(dataset, out_dir);
  out << "wrote " << dataset.num_items() << " items, " << dataset.layers().size() << " layer(s) to " << out_dir
      << " (bayes accuracy " << bayes_accuracy(spec) << ")\n";
  return kExitOk;
}

int cmd_ims_trace(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trace incremental multi-model selection per episode", "cdfsl ims-trace"};
  attach_config(app, args);
  std::string library_path, output;
  EpisodeConfig episodes;
  TrainFlags flags;
  app.add_option("--library", library_path, "Multi-model library manifest")->required();
  add_episode_flags(app, episodes, true);
  add_train_flags(app, flags);
  app.add_option("--output", output, "JSON-lines output file (default: stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const MethodSpec method = method_spec(MethodKind::ims, flags, "");
  method.validate();
  const EmbeddingDataset dataset = load_dataset(library_path);
  for (const auto& w : check_feasibility(dataset, episodes)) err << "warning: " << w << "\n";

  std::ofstream file;
  if (!output.empty()) {
    file.open(output, std::ios::binary | std::ios::trunc);
    if (!file) throw DataError(output + ": cannot open for writing");
  }
  std::ostream& sink = output.empty() ? out : file;
  for (int i = 0; i < episodes.episodes; ++i) {
    sink << ims_trace(dataset, method, sample_episode(dataset, episodes, i)).dump() << "\n";
  }
  if (!sink) throw DataError("failed writing ims trace");
  return kExitOk;
}

int cmd_inspect(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Summarize an embedding dataset", "cdfsl inspect"};
  std::string path;
  app.add_option("--dataset", path, "Dataset manifest (or its directory)")->required();
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const EmbeddingDataset dataset = load_dataset(path);
  std::size_t smallest = dataset.num_items();
  for (const auto& [cls, items] : dataset.class_index()) smallest = std::min(smallest, items.size());
  out << "dataset " << dataset.name() << "\n"
      << "items " << dataset.num_items() << ", classes " << dataset.class_index().size()
      << ", smallest class " << smallest << "\n";
  for (const auto& model : dataset.models()) {
    out << "model " << model << ":";
    for (const auto& key : dataset.layers_of(model)) out << " " << key.layer_index << "(dim " << dataset.dim(key) << ")";
    out << "\n";
  }
  return kExitOk;
}

constexpr const char* kUsage =
    "usage: cdfsl <command> [flags]\n"
    "commands:\n"
    "  evaluate   run a method over seeded K-way N-shot episodes\n"
    "  synth      generate a synthetic embedding dataset\n"
    "  ims-trace  per-episode multi-model selection trace (JSON lines)\n"
    "  inspect    summarize a dataset\n"
    "run 'cdfsl <command> --help' for flags\n";

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << kUsage;
    return kExitConfig;
  }
  const std::string& command = args.front();
  const std::vector<std::string> rest(args.begin() + 1, args.end());
  try {
    if (command == "evaluate") return cmd_evaluate(rest, out, err);
    if (command == "synth") return cmd_synth(rest, out, err);
    if (command == "ims-trace") return cmd_ims_trace(rest, out, err);
    if (command == "inspect") return cmd_inspect(rest, out, err);
    if (command == "--help" || command == "-h" || command == "help") {
      out << kUsage;
      return kExitOk;
    }
    err << "unknown command '" << command << "'\n" << kUsage;
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace cdfsl
