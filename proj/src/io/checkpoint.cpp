#include <map>
#include <set>

#include "atnbreak/io.hpp"
#include "atnbreak/json_io.hpp"
#include "byte_io.hpp"

namespace atnbreak {

using nlohmann::json;

std::vector<std::uint8_t> encode_checkpoint(const ViTModel& model, std::uint64_t seed,
                                            const json& provenance) {
  check_params(model.params, model.config);
  std::vector<std::uint8_t> payload;
  json manifest = json::array();
  json groups = json::array();
  std::set<std::string> seen_groups;
  for (const auto& slot : param_slots(model.params)) {
    const auto bytes = encode_tensor(*slot.array);
    manifest.push_back({{"name", slot.name},
                        {"group", slot.group},
                        {"shape", slot.array->shape()},
                        {"offset", payload.size()},
                        {"length", bytes.size()}});
    if (seen_groups.insert(slot.group).second) groups.push_back(slot.group);
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  }
  json header = {{"format", "atnbreak-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"config", to_json(model.config)},
                 {"seed", seed},
                 {"groups", groups},
                 {"params", manifest},
                 {"provenance", provenance}};
  const std::string text = header.dump();

  ByteWriter w;
  w.raw("ATNC");
  w.u16(kCheckpointVersion);
  w.u16(0);
  w.u64(text.size());
  w.raw(text);
  w.u32(crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  w.raw(payload);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  if (!r.expect_magic("ATNC")) throw FormatError(FormatErrorKind::bad_magic, "checkpoint: bad magic");
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::bad_version,
                      "checkpoint: unsupported version " + std::to_string(version));
  }
  r.u16();
  const auto header_len = r.u64();
  if (header_len > r.remaining()) throw FormatError(FormatErrorKind::truncated, "checkpoint: truncated header");
  const auto text = r.take(header_len);
  if (r.u32() != crc32(text)) throw FormatError(FormatErrorKind::crc_mismatch, "checkpoint: header CRC mismatch");
  const auto payload = bytes.subspan(r.position());

  Checkpoint ck;
  try {
    ck.header = json::parse(text.begin(), text.end());
    from_json(ck.header.at("config"), ck.model.config);
    ck.seed = ck.header.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("checkpoint: bad header: ") + e.what());
  } catch (const ConfigKeyError& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("checkpoint: bad config: ") + e.what());
  }
  try {
    ck.model.config.validate();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("checkpoint: ") + e.what());
  }

  ck.model.params = init_params(ck.model.config, 0);
  std::map<std::string, DiffArray*> by_name;
  for (auto& slot : param_slots(ck.model.params)) by_name[slot.name] = slot.array;

  std::set<std::string> loaded;
  try {
    for (const auto& entry : ck.header.at("params")) {
      const auto name = entry.at("name").get<std::string>();
      auto it = by_name.find(name);
      if (it == by_name.end()) {
        throw FormatError(FormatErrorKind::manifest, "checkpoint: unexpected parameter " + name);
      }
      if (!loaded.insert(name).second) {
        throw FormatError(FormatErrorKind::manifest, "checkpoint: parameter " + name + " listed twice");
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto length = entry.at("length").get<std::size_t>();
      if (offset > payload.size() || length > payload.size() - offset) {
        throw FormatError(FormatErrorKind::truncated, "checkpoint: payload truncated at " + name);
      }
      std::size_t used = 0;
      DiffArray a = decode_tensor(payload.subspan(offset, length), &used);
      if (used != length) {
        throw FormatError(FormatErrorKind::manifest, "checkpoint: length mismatch for " + name);
      }
      if (a.shape() != it->second->shape() ||
          entry.at("shape").get<Shape>() != it->second->shape()) {
        throw FormatError(FormatErrorKind::manifest, "checkpoint: " + name + " has shape " +
                                                         shape_string(a.shape()) + ", expected " +
                                                         shape_string(it->second->shape()));
      }
      *it->second = std::move(a);
    }
  } catch (const json::exception& e) {
    throw FormatError(FormatErrorKind::malformed, std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (loaded.size() != by_name.size()) {
    for (const auto& [name, _] : by_name) {
      if (!loaded.count(name)) {
        throw FormatError(FormatErrorKind::manifest, "checkpoint: missing parameter " + name);
      }
    }
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const ViTModel& model, std::uint64_t seed,
                      const json& provenance) {
  write_file_atomic(path, encode_checkpoint(model, seed, provenance));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const ViTConfig& expected) {
  Checkpoint ck = read_checkpoint(path);
  if (!(ck.model.config == expected)) {
    throw FormatError(FormatErrorKind::config_mismatch,
                      "checkpoint config " + to_json(ck.model.config).dump() +
                          " does not match expected " + to_json(expected).dump());
  }
  return ck;
}

}  // namespace atnbreak
