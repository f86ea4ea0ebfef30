#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "atnbreak/attack.hpp"
#include "atnbreak/dataset.hpp"
#include "atnbreak/metrics.hpp"
#include "atnbreak/train.hpp"
#include "atnbreak/vit.hpp"
#include "json.hpp"

namespace atnbreak {

// Unknown or ill-typed key in a JSON config; key() is the dotted path.
class ConfigKeyError : public std::invalid_argument {
 public:
  ConfigKeyError(std::string key, const std::string& what)
      : std::invalid_argument(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

// Serialization of the config structs. from_json merges into `out`: keys absent
// from the document keep their current values; unknown keys throw ConfigKeyError.
nlohmann::json to_json(const ViTConfig& cfg);
nlohmann::json to_json(const AttackConfig& cfg);
nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const TraceEntry& entry);

void from_json(const nlohmann::json& j, ViTConfig& out, const std::string& prefix = "model");
void from_json(const nlohmann::json& j, AttackConfig& out, const std::string& prefix = "attack");
void from_json(const nlohmann::json& j, DatasetSpec& out, const std::string& prefix = "dataset");
void from_json(const nlohmann::json& j, TrainConfig& out, const std::string& prefix = "train");

// One JSON object per line: iteration, l_atn, l_emb, l_comb, beta, z_linf.
std::string trace_jsonl(std::span<const TraceEntry> trace);
void write_trace(const std::filesystem::path& path, std::span<const TraceEntry> trace);

}  // namespace atnbreak
