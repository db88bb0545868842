#include <cstdio>
#include <fstream>
#include <sstream>

#include "cdfsl/eval.hpp"

namespace cdfsl {

using nlohmann::json;

namespace {

json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"momentum", t.momentum},
          {"batch_size", t.batch_size},
          {"weight_decay", t.weight_decay}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.momentum = j.at("momentum").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.weight_decay = j.at("weight_decay").get<double>();
  return t;
}

json to_json(const EpisodeConfig& e) {
  return {{"ways", e.ways},
          {"shots", e.shots},
          {"queries", e.queries_per_class},
          {"episodes", e.episodes},
          {"master_seed", e.master_seed}};
}

EpisodeConfig episodes_from_json(const json& j) {
  EpisodeConfig e;
  e.ways = j.at("ways").get<int>();
  e.shots = j.at("shots").get<int>();
  e.queries_per_class = j.at("queries").get<int>();
  e.episodes = j.at("episodes").get<int>();
  e.master_seed = j.at("master_seed").get<Seed>();
  return e;
}

void dump_into(const json& j, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * (depth + 1)), ' ');
  const std::string close_pad(static_cast<std::size_t>(2 * depth), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [key, value] : j.items()) {  // std::map storage: keys already sorted
        if (!first) out += ",\n";
        first = false;
        out += pad + json(key).dump() + ": ";
        dump_into(value, out, depth + 1);
      }
      out += "\n" + close_pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += ",\n";
        out += pad;
        dump_into(j[i], out, depth + 1);
      }
      out += "\n" + close_pad + "]";
      return;
    }
    case json::value_t::number_float: {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", j.get<double>());
      out += buf;
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

json to_json(const MethodSpec& m) {
  json j = {{"kind", to_string(m.kind)}, {"train", to_json(m.train)}};
  if (m.kind == MethodKind::ims) {
    j["cv"] = {{"folds", m.cv.folds}, {"seed", m.cv.seed}, {"probe", to_json(m.cv.probe)}};
  }
  if (!uses_library(m.kind) && m.kind != MethodKind::random_baseline && m.layer) j["layer"] = to_string(*m.layer);
  if (m.kind == MethodKind::cosine) j["cosine_scale"] = m.cosine_scale;
  return j;
}

MethodSpec method_from_json(const json& j) {
  MethodSpec m;
  m.kind = parse_method_kind(j.at("kind").get<std::string>());
  m.train = train_from_json(j.at("train"));
  if (j.contains("cv")) {
    const auto& cv = j.at("cv");
    m.cv.folds = cv.at("folds").get<int>();
    m.cv.seed = cv.at("seed").get<Seed>();
    m.cv.probe = train_from_json(cv.at("probe"));
  }
  if (j.contains("layer")) m.layer = parse_layer_key(j.at("layer").get<std::string>());
  if (j.contains("cosine_scale")) m.cosine_scale = j.at("cosine_scale").get<double>();
  return m;
}

json to_json(const EvalReport& r, bool include_wall_time) {
  json j = {{"config", {{"dataset", r.dataset}, {"method", to_json(r.method)}, {"episodes", to_json(r.episodes)}}},
            {"per_episode_accuracy", r.per_episode_accuracy},
            {"mean", r.mean},
            {"ci95", r.ci95},
            {"formatted", format_report(r)},
            {"warnings", r.warnings},
            {"notes", r.notes}};
  if (include_wall_time) j["wall_time_seconds"] = r.wall_time_seconds;
  return j;
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  const auto& config = j.at("config");
  r.dataset = config.at("dataset").get<std::string>();
  r.method = method_from_json(config.at("method"));
  r.episodes = episodes_from_json(config.at("episodes"));
  r.per_episode_accuracy = j.at("per_episode_accuracy").get<std::vector<double>>();
  r.mean = j.at("mean").get<double>();
  r.ci95 = j.at("ci95").get<double>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.notes = j.at("notes").get<std::vector<std::string>>();
  if (j.contains("wall_time_seconds")) r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  return r;
}

std::string canonical_dump(const json& j) {
  std::string out;
  dump_into(j, out, 0);
  out += "\n";
  return out;
}

void write_report(const EvalReport& report, const std::filesystem::path& path, bool include_wall_time) {
  const std::string text = canonical_dump(to_json(report, include_wall_time));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << text;
  out.flush();
  if (!out) throw DataError(path.string() + ": write failure");
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open report");
  try {
    return report_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed report: " + e.what());
  }
}

}  // namespace cdfsl
