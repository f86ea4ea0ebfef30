#include "atnbreak/json_io.hpp"

#include <functional>
#include <map>

#include "atnbreak/io.hpp"

namespace atnbreak {

using nlohmann::json;

namespace {

// Strict object reader: each handler consumes one key.
class Fields {
 public:
  Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) {
      throw ConfigKeyError(prefix_, "config section '" + prefix_ + "' must be a JSON object");
    }
  }

  template <typename T>
  Fields& field(const std::string& key, T& target) {
    handlers_[key] = [this, key, &target](const json& v) {
      try {
        target = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigKeyError(path(key), "config key '" + path(key) + "' has the wrong type");
      }
    };
    return *this;
  }

  Fields& custom(const std::string& key, std::function<void(const json&)> fn) {
    handlers_[key] = [this, key, fn = std::move(fn)](const json& v) {
      try {
        fn(v);
      } catch (const ConfigKeyError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigKeyError(path(key), "config key '" + path(key) + "': " + e.what());
      }
    };
    return *this;
  }

  void apply() const {
    for (const auto& [key, value] : j_.items()) {
      auto it = handlers_.find(key);
      if (it == handlers_.end()) {
        throw ConfigKeyError(path(key), "unknown config key '" + path(key) + "'");
      }
      it->second(value);
    }
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const json& j_;
  std::string prefix_;
  std::map<std::string, std::function<void(const json&)>> handlers_;
};

json adam_json(const AdamConfig& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

void adam_from(const json& j, AdamConfig& a, const std::string& prefix) {
  Fields(j, prefix)
      .field("beta1", a.beta1)
      .field("beta2", a.beta2)
      .field("eps", a.eps)
      .field("weight_decay", a.weight_decay)
      .apply();
}

}  // namespace

json to_json(const ViTConfig& c) {
  return {{"image_size", c.image_size}, {"patch_size", c.patch_size},
          {"channels", c.channels},     {"embed_dim", c.embed_dim},
          {"num_heads", c.num_heads},   {"num_layers", c.num_layers},
          {"mlp_ratio", c.mlp_ratio},   {"num_classes", c.num_classes},
          {"dense_classes", c.dense_classes}, {"input_mean", c.input_mean},
          {"input_std", c.input_std}};
}

json to_json(const AttackConfig& c) {
  json j = {{"epsilon", c.epsilon},
            {"eta", c.eta},
            {"iterations", c.iterations},
            {"loss_mode", std::string(to_string(c.loss_mode))},
            {"alpha", c.alpha},
            {"seed", c.seed},
            {"init", std::string(to_string(c.init))},
            {"adam", adam_json(c.adam)}};
  j["target_layer"] = c.target_layer ? json(*c.target_layer) : json("last");
  return j;
}

json to_json(const DatasetSpec& s) {
  return {{"seed", s.seed},
          {"num_classes", s.num_classes},
          {"image_size", s.image_size},
          {"train_size", s.train_size},
          {"val_size", s.val_size},
          {"test_size", s.test_size},
          {"noise_std", s.noise_std},
          {"background_min", s.background_min},
          {"background_max", s.background_max},
          {"contrast_min", s.contrast_min},
          {"contrast_max", s.contrast_max},
          {"bar_min", s.bar_min},
          {"bar_max", s.bar_max},
          {"checker_cell", s.checker_cell},
          {"disk_radius_min", s.disk_radius_min},
          {"disk_radius_max", s.disk_radius_max},
          {"disk_center_jitter", s.disk_center_jitter}};
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"warmup_steps", c.warmup_steps},
          {"adam", adam_json(c.adam)},  {"seed", c.seed},
          {"dense_weight", c.dense_weight}};
}

json to_json(const MetricReport& r) {
  return {{"metric", r.metric}, {"value", r.value}, {"n", r.n}, {"fingerprint", r.fingerprint}};
}

json to_json(const TraceEntry& e) {
  return {{"iteration", e.iteration}, {"l_atn", e.l_atn}, {"l_emb", e.l_emb},
          {"l_comb", e.l_comb},       {"beta", e.beta},   {"z_linf", e.z_linf}};
}

void from_json(const json& j, ViTConfig& c, const std::string& prefix) {
  Fields(j, prefix)
      .field("image_size", c.image_size)
      .field("patch_size", c.patch_size)
      .field("channels", c.channels)
      .field("embed_dim", c.embed_dim)
      .field("num_heads", c.num_heads)
      .field("num_layers", c.num_layers)
      .field("mlp_ratio", c.mlp_ratio)
      .field("num_classes", c.num_classes)
      .field("dense_classes", c.dense_classes)
      .field("input_mean", c.input_mean)
      .field("input_std", c.input_std)
      .apply();
}

void from_json(const json& j, AttackConfig& c, const std::string& prefix) {
  Fields f(j, prefix);
  f.field("epsilon", c.epsilon)
      .field("eta", c.eta)
      .field("iterations", c.iterations)
      .custom("loss_mode", [&](const json& v) { c.loss_mode = parse_loss_mode(v.get<std::string>()); })
      .custom("target_layer",
              [&](const json& v) {
                if (v.is_string() && v.get<std::string>() == "last") {
                  c.target_layer.reset();
                } else {
                  c.target_layer = v.get<std::size_t>();
                }
              })
      .field("alpha", c.alpha)
      .field("seed", c.seed)
      .custom("init", [&](const json& v) { c.init = parse_z_init(v.get<std::string>()); })
      .custom("adam", [&](const json& v) { adam_from(v, c.adam, f.path("adam")); })
      .apply();
}

void from_json(const json& j, DatasetSpec& s, const std::string& prefix) {
  Fields(j, prefix)
      .field("seed", s.seed)
      .field("num_classes", s.num_classes)
      .field("image_size", s.image_size)
      .field("train_size", s.train_size)
      .field("val_size", s.val_size)
      .field("test_size", s.test_size)
      .field("noise_std", s.noise_std)
      .field("background_min", s.background_min)
      .field("background_max", s.background_max)
      .field("contrast_min", s.contrast_min)
      .field("contrast_max", s.contrast_max)
      .field("bar_min", s.bar_min)
      .field("bar_max", s.bar_max)
      .field("checker_cell", s.checker_cell)
      .field("disk_radius_min", s.disk_radius_min)
      .field("disk_radius_max", s.disk_radius_max)
      .field("disk_center_jitter", s.disk_center_jitter)
      .apply();
}

void from_json(const json& j, TrainConfig& c, const std::string& prefix) {
  Fields f(j, prefix);
  f.field("epochs", c.epochs)
      .field("batch_size", c.batch_size)
      .field("lr", c.lr)
      .field("warmup_steps", c.warmup_steps)
      .custom("adam", [&](const json& v) { adam_from(v, c.adam, f.path("adam")); })
      .field("seed", c.seed)
      .field("dense_weight", c.dense_weight)
      .apply();
}

std::string trace_jsonl(std::span<const TraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

void write_trace(const std::filesystem::path& path, std::span<const TraceEntry> trace) {
  write_file_atomic(path, trace_jsonl(trace));
}

}  // namespace atnbreak
