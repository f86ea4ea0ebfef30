#include "run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "atnbreak/json_io.hpp"

namespace atnbreak::cli {

using nlohmann::json;

json to_json(const RunConfig& cfg) {
  return {{"seed", cfg.seed},
          {"model", atnbreak::to_json(cfg.model)},
          {"attack", atnbreak::to_json(cfg.attack)},
          {"dataset", atnbreak::to_json(cfg.dataset)},
          {"train", atnbreak::to_json(cfg.train)},
          {"output", {{"dir", cfg.output.dir}}}};
}

void merge_json(const json& j, RunConfig& cfg) {
  if (!j.is_object()) throw ConfigKeyError("", "run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "seed") {
      if (!value.is_number_unsigned()) {
        throw ConfigKeyError("seed", "config key 'seed' must be a non-negative integer");
      }
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "model") {
      from_json(value, cfg.model, "model");
    } else if (key == "attack") {
      from_json(value, cfg.attack, "attack");
    } else if (key == "dataset") {
      from_json(value, cfg.dataset, "dataset");
    } else if (key == "train") {
      from_json(value, cfg.train, "train");
    } else if (key == "output") {
      if (!value.is_object()) throw ConfigKeyError("output", "config key 'output' must be an object");
      for (const auto& [k, v] : value.items()) {
        if (k != "dir") throw ConfigKeyError("output." + k, "unknown config key 'output." + k + "'");
        if (!v.is_string()) throw ConfigKeyError("output.dir", "config key 'output.dir' must be a string");
        cfg.output.dir = v.get<std::string>();
      }
    } else {
      throw ConfigKeyError(key, "unknown config key '" + key + "'");
    }
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

namespace {

double parse_double(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw UsageError("cannot parse " + std::string(what) + " '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace

double parse_epsilon(std::string_view text) {
  double eps = 0.0;
  if (const auto slash = text.find('/'); slash != std::string_view::npos) {
    const double num = parse_double(text.substr(0, slash), "epsilon");
    const double den = parse_double(text.substr(slash + 1), "epsilon");
    if (den == 0.0) throw UsageError("epsilon '" + std::string(text) + "' divides by zero");
    eps = num / den;
  } else {
    eps = parse_double(text, "epsilon");
  }
  if (!std::isfinite(eps) || eps < 0.0 || eps > 1.0) {
    throw UsageError("epsilon '" + std::string(text) + "' outside [0, 1]");
  }
  return eps;
}

std::optional<std::size_t> parse_layer(std::string_view text) {
  if (text == "last") return std::nullopt;
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw UsageError("layer must be 'last' or an index, got '" + std::string(text) + "'");
  }
  return v;
}

}  // namespace atnbreak::cli
