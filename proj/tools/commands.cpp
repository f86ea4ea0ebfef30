#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "atnbreak/harness.hpp"
#include "atnbreak/io.hpp"
#include "atnbreak/json_io.hpp"
#include "atnbreak/parallel.hpp"
#include "atnbreak/rng.hpp"
#include "run_config.hpp"

namespace atnbreak::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by several subcommands; unset optionals leave the config alone.
struct AttackFlags {
  std::optional<std::string> eps;
  std::optional<std::size_t> iters;
  std::optional<double> lr;
  std::optional<std::string> loss;
  std::optional<std::string> layer;
  std::optional<double> alpha;
  std::optional<std::string> init;
  std::optional<std::uint64_t> attack_seed;

  void add(CLI::App& app) {
    app.add_option("--eps", eps, "L-inf budget, e.g. 8/255 or 0.03");
    app.add_option("--iters", iters, "attack iterations");
    app.add_option("--lr", lr, "attack learning rate");
    app.add_option("--loss", loss, "loss mode: atn, emb or comb");
    app.add_option("--layer", layer, "attacked layer: last or an index");
    app.add_option("--alpha", alpha, "attention loss weight");
    app.add_option("--init", init, "perturbation start: by_mode, zero or uniform");
    app.add_option("--attack-seed", attack_seed, "seed for the perturbation start");
  }

  void apply(AttackConfig& cfg) const {
    try {
      if (eps) cfg.epsilon = parse_epsilon(*eps);
      if (iters) cfg.iterations = *iters;
      if (lr) cfg.eta = *lr;
      if (loss) cfg.loss_mode = parse_loss_mode(*loss);
      if (layer) cfg.target_layer = parse_layer(*layer);
      if (alpha) cfg.alpha = *alpha;
      if (init) cfg.init = parse_z_init(*init);
      if (attack_seed) cfg.seed = *attack_seed;
    } catch (const UsageError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = default_jobs();

  void add(CLI::App& app) {
    app.add_option("--config", config, "run config JSON");
    app.add_option("--seed", seed, "run seed");
    app.add_option("--jobs", jobs, "worker threads (default: ATNBREAK_JOBS or 1)")
        ->check(CLI::PositiveNumber);
  }
};

// Defaults, then the run config stored in the checkpoint (if any), then the
// --config file, then flags.
RunConfig resolve(const Common& common, const json* stored = nullptr) {
  RunConfig cfg;
  if (stored && stored->contains("provenance") && (*stored)["provenance"].contains("config")) {
    merge_json((*stored)["provenance"]["config"], cfg);
  }
  if (common.config) merge_json(read_json_file(*common.config), cfg);
  if (common.seed) cfg.seed = *common.seed;
  return cfg;
}

template <typename F>
void as_usage(F&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

void validate_for_model(RunConfig& cfg, const ViTConfig& model) {
  cfg.model = model;
  as_usage([&] {
    cfg.attack.validate();
    cfg.attack.resolved_layer(model);
    cfg.dataset.validate();
  });
  if (cfg.dataset.image_size != model.image_size) {
    throw UsageError("dataset.image_size " + std::to_string(cfg.dataset.image_size) +
                     " does not match the model's image_size " +
                     std::to_string(model.image_size));
  }
}

std::string image_ext(std::size_t channels) { return channels == 1 ? ".pgm" : ".ppm"; }

std::string format_reports(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(32) << "metric" << std::right << std::setw(10) << "value"
     << std::setw(8) << "n" << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(32) << r.metric << std::right << std::setw(10) << std::fixed
       << std::setprecision(4) << r.value << std::setw(8) << r.n << '\n';
  }
  return os.str();
}

json reports_json(const std::vector<MetricReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  return arr;
}

// ---- train ----

struct TrainArgs {
  Common common;
  std::string out;
  std::optional<std::string> log;
  std::optional<std::size_t> epochs;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = resolve(a.common);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  cfg.train.jobs = a.common.jobs;
  as_usage([&] {
    cfg.model.validate();
    cfg.dataset.validate();
  });
  if (cfg.dataset.image_size != cfg.model.image_size) {
    throw UsageError("dataset.image_size does not match model.image_size");
  }

  const fs::path ckpt = a.out;
  const fs::path log_path = a.log ? fs::path(*a.log) : fs::path(ckpt).replace_extension(".train.jsonl");
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());

  SyntheticDataset data(cfg.dataset);
  ViTModel model{cfg.model, init_params(cfg.model, cfg.seed)};
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed({cfg.seed, cfg.train.seed});

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw FormatError(FormatErrorKind::io, "cannot write " + log_path.string());
  const TrainReport report = train(model, data, tc, [&](const EpochLog& e) {
    const json line = {{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_accuracy", e.val_accuracy},
                       {"val_dense_accuracy", e.val_dense_accuracy}};
    log << line.dump() << '\n' << std::flush;
    std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4)
              << e.train_loss << "  val " << e.val_accuracy << "  dense " << e.val_dense_accuracy
              << std::endl;
  });

  const json provenance = {{"config", to_json(cfg)},
                           {"val_accuracy", report.val_accuracy},
                           {"val_dense_accuracy", report.val_dense_accuracy}};
  write_checkpoint(ckpt, model, cfg.seed, provenance);
  std::cout << "val accuracy " << std::fixed << std::setprecision(4) << report.val_accuracy
            << ", dense accuracy " << report.val_dense_accuracy << "\nwrote " << ckpt.string()
            << '\n';
  return kExitOk;
}

// ---- attack ----

struct AttackArgs {
  Common common;
  AttackFlags flags;
  std::string model;
  std::optional<std::string> image;
  std::optional<std::string> split;
  std::size_t index = 0;
  std::size_t count = 1;
  std::optional<std::string> out;
};

struct AttackInput {
  std::string source;
  std::string subdir;
  DiffArray image;
  std::uint64_t seed;
};

int cmd_attack(const AttackArgs& a) {
  const Checkpoint ck = read_checkpoint(a.model);
  RunConfig cfg = resolve(a.common, &ck.header);
  a.flags.apply(cfg.attack);
  validate_for_model(cfg, ck.model.config);
  if (a.image.has_value() == a.split.has_value()) {
    throw UsageError("attack needs exactly one of --image or --dataset");
  }

  std::vector<AttackInput> inputs;
  if (a.image) {
    inputs.push_back({*a.image, "", read_image(*a.image).to_array(), cfg.attack.seed});
  } else {
    Split split{};
    as_usage([&] { split = parse_split(*a.split); });
    SyntheticDataset data(cfg.dataset);
    if (a.count == 0 || a.index + a.count > data.size(split)) {
      throw UsageError("samples " + std::to_string(a.index) + ".." +
                       std::to_string(a.index + a.count) + " outside the " + *a.split + " split");
    }
    for (std::size_t i = a.index; i < a.index + a.count; ++i) {
      const std::string name = *a.split + "_" + std::to_string(i);
      inputs.push_back({name, name, data.sample(split, i).image, derive_seed({cfg.attack.seed, i})});
    }
  }

  const fs::path out = a.out ? fs::path(*a.out) : fs::path(cfg.output.dir);
  std::vector<AttackResult> results(inputs.size());
  parallel_for(inputs.size(), a.common.jobs, [&](std::size_t i) {
    AttackConfig local = cfg.attack;
    local.seed = inputs[i].seed;
    results[i] = attack(inputs[i].image, ck.model, local);
  });

  json run = {{"config", to_json(cfg)}, {"model_fingerprint", fingerprint(ck.model, cfg.attack)}};
  json items = json::array();
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& in = inputs[i];
    const auto& r = results[i];
    const fs::path dir = out / in.subdir;
    fs::create_directories(dir);
    const DiffArray adv = apply_perturbation(in.image, r.z_star);
    const std::string ext = image_ext(in.image.shape()[0]);
    write_tensor(dir / "z.tns", r.perturbation());
    write_image(dir / ("clean" + ext), Image::from_array(in.image));
    write_image(dir / ("adv" + ext), Image::from_array(adv));
    write_trace(dir / "trace.jsonl", r.trace);

    json item = {{"source", in.source},
                 {"dir", in.subdir.empty() ? "." : in.subdir},
                 {"seed", in.seed},
                 {"final_attention_loss", r.final_attention_loss},
                 {"final_embedding_distance", r.final_embedding_distance}};
    if (ck.model.params.classifier) {
      item["clean_prediction"] = argmax(forward(in.image, ck.model).logits->values());
      item["adv_prediction"] = argmax(forward(adv, ck.model).logits->values());
    }
    items.push_back(std::move(item));
    std::cout << in.source << ": L_atn " << std::setprecision(6) << r.final_attention_loss
              << "  L_emb " << r.final_embedding_distance << '\n';
  }
  run["inputs"] = std::move(items);
  write_file_atomic(out / "run.json", run.dump(2) + "\n");
  std::cout << "wrote " << inputs.size() << " attack(s) to " << out.string() << '\n';
  return kExitOk;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  AttackFlags flags;
  std::vector<std::string> models;
  std::string task;
  std::optional<std::string> attack_config;
  std::string split = "test";
  std::size_t count = 100;
  std::size_t gallery = 64;
  std::optional<std::string> out;
};

int cmd_eval(const EvalArgs& a) {
  if (a.models.empty()) throw UsageError("eval needs --model");
  std::vector<ViTModel> models;
  std::vector<Checkpoint> cks;
  for (const auto& path : a.models) cks.push_back(read_checkpoint(path));
  for (const auto& ck : cks) models.push_back(ck.model);

  RunConfig cfg = resolve(a.common, &cks.front().header);
  if (a.attack_config) from_json(read_json_file(*a.attack_config), cfg.attack, "attack");
  a.flags.apply(cfg.attack);
  validate_for_model(cfg, models.front().config);
  Split split{};
  as_usage([&] { split = parse_split(a.split); });
  const std::size_t jobs = a.common.jobs;
  SyntheticDataset data(cfg.dataset);
  const ViTModel& model = models.front();
  const std::string fp = fingerprint(model, cfg.attack);

  json report = {{"task", a.task}, {"config", to_json(cfg)}};
  std::vector<MetricReport> reports;
  std::string table;

  if (a.task == "classification") {
    if (!model.params.classifier) throw EvalError("model has no classifier head");
    const EvalSet set = select_correct(model, data, split, a.count);
    const auto r = attack_success_rate_classification(model, set, cfg.attack, jobs);
    reports = {r.attacked, r.control};
  } else if (a.task == "retrieval") {
    const EvalSet set = load_eval_set(data, split, a.gallery, model.config.patch_size);
    const auto r = retrieval_success_at_k(model, set.images, kRetrievalKs, cfg.attack, jobs);
    reports = r.attacked;
    reports.insert(reports.end(), r.control.begin(), r.control.end());
  } else if (a.task == "dense") {
    if (!model.params.dense) throw EvalError("model has no dense head");
    const EvalSet set = load_eval_set(data, split, a.count, model.config.patch_size);
    reports = dense_degradation(model, set, cfg.attack, jobs).reports;
  } else if (a.task == "compare") {
    if (!model.params.classifier || !model.params.dense) {
      throw EvalError("compare needs a model with classifier and dense heads");
    }
    const EvalSet set =
        load_eval_set(data, split, std::max(a.count, a.gallery), model.config.patch_size);
    const ModeComparison cmp = mode_comparison_report(model, set, a.gallery, cfg.attack, jobs);
    json grid = json::object();
    for (std::size_t t = 0; t < kCompareTasks.size(); ++t) {
      for (std::size_t m = 0; m < kLossModes.size(); ++m) {
        grid[kCompareTasks[t]][std::string(to_string(kLossModes[m]))] = cmp.degradation[t][m];
      }
    }
    report["grid"] = grid;
    report["n"] = {{"classification", cmp.classification_n},
                   {"retrieval", cmp.retrieval_n},
                   {"dense", cmp.dense_n}};
    report["comb_at_least_min_tasks"] = cmp.comb_at_least_min;
    table = format_comparison(cmp);
  } else if (a.task == "transfer") {
    if (models.size() < 2) throw UsageError("transfer needs at least two --model checkpoints");
    const EvalSet set = load_eval_set(data, split, a.count, model.config.patch_size);
    const auto asr = transfer_matrix(models, models, set, cfg.attack, jobs);
    report["matrix"] = asr;
    json fps = json::array();
    for (const auto& m : models) fps.push_back(fingerprint(m, cfg.attack));
    report["model_fingerprints"] = fps;
    std::ostringstream os;
    os << std::left << std::setw(12) << "source";
    for (std::size_t t = 0; t < models.size(); ++t) os << std::right << std::setw(10) << ("t" + std::to_string(t));
    os << '\n';
    for (std::size_t s = 0; s < models.size(); ++s) {
      os << std::left << std::setw(12) << ("s" + std::to_string(s));
      for (double v : asr[s]) os << std::right << std::setw(10) << std::fixed << std::setprecision(4) << v;
      os << '\n';
    }
    table = os.str();
  } else {
    throw UsageError("unknown task '" + a.task +
                     "' (expected classification, retrieval, dense, compare or transfer)");
  }

  if (!reports.empty()) {
    report["reports"] = reports_json(reports);
    table = format_reports(reports);
  }
  report["fingerprint"] = fp;
  const fs::path out = a.out ? fs::path(*a.out) : fs::path(cfg.output.dir) / "report.json";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_atomic(out, report.dump(2) + "\n");
  std::cout << table << "wrote " << out.string() << '\n';
  return kExitOk;
}

// ---- viz ----

struct VizArgs {
  std::string model;
  std::string image;
  std::optional<std::string> perturbation;
  std::string layer = "last";
  std::vector<std::string> out;
};

int cmd_viz(const VizArgs& a) {
  const Checkpoint ck = read_checkpoint(a.model);
  const ViTModel& model = ck.model;
  std::size_t layer = model.config.num_layers - 1;
  if (const auto l = parse_layer(a.layer)) layer = *l;
  if (layer >= model.config.num_layers) {
    throw UsageError("layer " + std::to_string(layer) + " outside model with " +
                     std::to_string(model.config.num_layers) + " layers");
  }
  const DiffArray clean = read_image(a.image).to_array();
  DiffArray adv = clean;
  if (a.perturbation) {
    const DiffArray z = read_tensor(*a.perturbation);
    if (z.shape() != clean.shape()) {
      throw DimensionError("perturbation shape " + shape_string(z.shape()) +
                           " does not match image shape " + shape_string(clean.shape()));
    }
    adv = apply_perturbation(clean, z.values());
  }
  const std::size_t s = model.config.image_size;
  for (std::size_t i = 0; i < 2; ++i) {
    Image heat{1, s, s, cls_attention_heatmap(model, i == 0 ? clean : adv, layer)};
    const fs::path path = a.out[i];
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_image(path, heat);
  }
  std::cout << "wrote " << a.out[0] << " and " << a.out[1] << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Task-agnostic attention/embedding attacks on a toy vision transformer",
               "atnbreak"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a toy ViT on the synthetic dataset");
  train_args.common.add(*train_cmd);
  train_cmd->add_option("--out", train_args.out, "checkpoint path")->required();
  train_cmd->add_option("--log", train_args.log, "training log (default: <out>.train.jsonl)");
  train_cmd->add_option("--epochs", train_args.epochs, "training epochs");

  AttackArgs attack_args;
  auto* attack_cmd = app.add_subcommand("attack", "craft adversarial perturbations");
  attack_args.common.add(*attack_cmd);
  attack_args.flags.add(*attack_cmd);
  attack_cmd->add_option("--model", attack_args.model, "checkpoint")->required();
  attack_cmd->add_option("--image", attack_args.image, "input PGM/PPM image");
  attack_cmd->add_option("--dataset", attack_args.split, "synthetic split: train, val or test");
  attack_cmd->add_option("--index", attack_args.index, "first sample index");
  attack_cmd->add_option("--count", attack_args.count, "number of samples");
  attack_cmd->add_option("--out", attack_args.out, "output directory");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate attacks on the downstream tasks");
  eval_args.common.add(*eval_cmd);
  eval_args.flags.add(*eval_cmd);
  eval_cmd->add_option("--model", eval_args.models, "checkpoint (repeat for transfer)")->required();
  eval_cmd->add_option("--task", eval_args.task,
                       "classification, retrieval, dense, compare or transfer")
      ->required();
  eval_cmd->add_option("--attack-config", eval_args.attack_config, "attack section JSON");
  eval_cmd->add_option("--split", eval_args.split, "synthetic split");
  eval_cmd->add_option("--count", eval_args.count, "evaluation images");
  eval_cmd->add_option("--gallery", eval_args.gallery, "retrieval gallery size");
  eval_cmd->add_option("--out", eval_args.out, "report path (default: <output.dir>/report.json)");

  VizArgs viz_args;
  auto* viz_cmd = app.add_subcommand("viz", "render CLS attention heatmaps");
  viz_cmd->add_option("--model", viz_args.model, "checkpoint")->required();
  viz_cmd->add_option("--image", viz_args.image, "input PGM/PPM image")->required();
  viz_cmd->add_option("--perturbation", viz_args.perturbation, "z TensorFile");
  viz_cmd->add_option("--layer", viz_args.layer, "last or an index");
  viz_cmd->add_option("--out", viz_args.out, "clean and attacked heatmap paths")
      ->expected(2)
      ->required();

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*attack_cmd) return cmd_attack(attack_args);
    if (*eval_cmd) return cmd_eval(eval_args);
    if (*viz_cmd) return cmd_viz(viz_args);
  } catch (const ConfigKeyError& e) {
    std::cerr << "atnbreak: config error at '" << e.key() << "': " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "atnbreak: " << e.what() << '\n';
    return kExitUsage;
  } catch (const AttackError& e) {
    std::cerr << "atnbreak: attack aborted at iteration " << e.iteration() << ": " << e.what()
              << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "atnbreak: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace atnbreak::cli
