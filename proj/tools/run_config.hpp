#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "atnbreak/attack.hpp"
#include "atnbreak/dataset.hpp"
#include "atnbreak/train.hpp"
#include "atnbreak/vit.hpp"
#include "json.hpp"

namespace atnbreak::cli {

// Bad flags, values or config documents; mapped to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct OutputConfig {
  std::string dir = "out";
};

// Everything a command needs besides its own flags. The JSON form has the
// top-level keys seed, model, attack, dataset, train and output.
struct RunConfig {
  std::uint64_t seed = 0;
  ViTConfig model;
  AttackConfig attack;
  DatasetSpec dataset;
  TrainConfig train;
  OutputConfig output;
};

nlohmann::json to_json(const RunConfig& cfg);

// Merges `j` into `cfg`; unknown keys raise ConfigKeyError.
void merge_json(const nlohmann::json& j, RunConfig& cfg);

// Reads a JSON config file; a missing or malformed file is a UsageError.
nlohmann::json read_json_file(const std::filesystem::path& path);

// "8/255" or a decimal such as "0.03137".
double parse_epsilon(std::string_view text);

// "last" or a zero-based layer index.
std::optional<std::size_t> parse_layer(std::string_view text);

}  // namespace atnbreak::cli
