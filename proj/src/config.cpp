#include "hir/config.hpp"

#include <set>
#include <stdexcept>

#include "hir/io.hpp"

namespace hir {

namespace {

using nlohmann::json;

void expect_keys(const json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!known.count(key)) {
      throw std::runtime_error("unknown config key '" + key + "' in " + where);
    }
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::Hir: return "hir";
    case Method::Farl: return "farl";
    case Method::Sft: return "sft";
  }
  return "unknown";
}

std::optional<Method> method_from_name(const std::string& name) {
  for (Method m : {Method::Hir, Method::Farl, Method::Sft}) {
    if (name == method_name(m)) return m;
  }
  return std::nullopt;
}

std::string TaskSpec::name() const {
  if (kind == TaskKind::ExternalJson) return "external-json";
  std::string n = task_kind_name(kind);
  if (kind == TaskKind::TrackingShuffledObjects || kind == TaskKind::LogicalDeduction) {
    n += "-" + std::to_string(size);
  }
  return n;
}

nlohmann::json config_to_json(const HirConfig& c) {
  json run;
  run["iterations"] = c.iterations;
  run["sampling_rounds"] = c.sampling_rounds;
  run["train_epochs"] = c.train_epochs;
  run["temperature"] = c.temperature;
  run["online_samples_per_iteration"] = c.online_samples_per_iteration;
  run["lr"] = c.lr;
  run["batch_size"] = c.batch_size;
  run["label_smoothing"] = c.label_smoothing;
  run["alpha"] = c.alpha;
  run["beta"] = c.beta;
  run["weight_decay"] = c.weight_decay;
  run["retention"] = c.retention == Retention::AppendAcrossIterations ? "append" : "clear";
  run["suboutput"] = c.suboutput == SuboutputGranularity::Token ? "token" : "none";
  run["max_new_tokens"] = c.max_new_tokens;
  run["correct_only"] = c.correct_only;
  run["persist_replay"] = c.persist_replay;
  run["sampling_threads"] = c.sampling_threads;
  run["seed"] = c.seed;
  run["precision"] = c.precision == Precision::F64 ? "f64" : "f32";

  json model;
  model["preset"] = c.model_preset;
  model["num_layers"] = c.model.num_layers;
  model["model_dim"] = c.model.model_dim;
  model["num_heads"] = c.model.num_heads;
  model["max_seq_len"] = c.model.max_seq_len;

  json task;
  task["kind"] = task_kind_name(c.task.kind);
  task["json_path"] = c.task.json_path;
  task["count"] = c.task.count;
  task["size"] = c.task.size;
  task["word_pool"] = c.task.gen.word_pool;
  task["color_pool"] = c.task.gen.color_pool;
  task["book_pool"] = c.task.gen.book_pool;
  task["task_seed"] = c.task.task_seed;
  task["split_seed"] = c.task.split_seed;
  task["train_fraction"] = c.task.train_fraction;

  json prompts;
  prompts["correct"] = c.prompts.correct_text;
  prompts["wrong"] = c.prompts.wrong_text;

  json doc;
  doc["schema_version"] = 1;
  doc["run"] = std::move(run);
  doc["model"] = std::move(model);
  doc["task"] = std::move(task);
  doc["prompts"] = std::move(prompts);
  return doc;
}

HirConfig config_from_json(const nlohmann::json& doc) {
  expect_keys(doc, {"schema_version", "run", "model", "task", "prompts"}, "config root");
  if (doc.contains("schema_version") && doc.at("schema_version").get<int>() != 1) {
    throw std::runtime_error("unsupported config schema_version");
  }
  HirConfig c;
  if (doc.contains("run")) {
    const json& run = doc.at("run");
    expect_keys(run,
                {"iterations", "sampling_rounds", "train_epochs", "temperature",
                 "online_samples_per_iteration", "lr", "batch_size", "label_smoothing",
                 "alpha", "beta", "weight_decay", "retention", "suboutput",
                 "max_new_tokens", "correct_only", "persist_replay", "sampling_threads",
                 "seed", "precision"},
                "run");
    read(run, "iterations", c.iterations);
    read(run, "sampling_rounds", c.sampling_rounds);
    read(run, "train_epochs", c.train_epochs);
    read(run, "temperature", c.temperature);
    read(run, "online_samples_per_iteration", c.online_samples_per_iteration);
    read(run, "lr", c.lr);
    read(run, "batch_size", c.batch_size);
    read(run, "label_smoothing", c.label_smoothing);
    read(run, "alpha", c.alpha);
    read(run, "beta", c.beta);
    read(run, "weight_decay", c.weight_decay);
    if (run.contains("retention")) {
      const auto r = run.at("retention").get<std::string>();
      if (r == "append") c.retention = Retention::AppendAcrossIterations;
      else if (r == "clear") c.retention = Retention::ClearEachIteration;
      else throw std::runtime_error("retention must be 'append' or 'clear'");
    }
    if (run.contains("suboutput")) {
      const auto s = run.at("suboutput").get<std::string>();
      if (s == "token") c.suboutput = SuboutputGranularity::Token;
      else if (s == "none") c.suboutput = SuboutputGranularity::None;
      else throw std::runtime_error("suboutput must be 'token' or 'none'");
    }
    read(run, "max_new_tokens", c.max_new_tokens);
    read(run, "correct_only", c.correct_only);
    read(run, "persist_replay", c.persist_replay);
    read(run, "sampling_threads", c.sampling_threads);
    read(run, "seed", c.seed);
    if (run.contains("precision")) {
      const auto p = run.at("precision").get<std::string>();
      if (p == "f64") c.precision = Precision::F64;
      else if (p == "f32") c.precision = Precision::F32;
      else throw std::runtime_error("precision must be 'f64' or 'f32'");
    }
  }
  if (doc.contains("model")) {
    const json& model = doc.at("model");
    expect_keys(model, {"preset", "num_layers", "model_dim", "num_heads", "max_seq_len"},
                "model");
    if (model.contains("preset")) {
      c.model_preset = model.at("preset").get<std::string>();
      if (c.model_preset == "base") c.model = ModelConfig::base();
      else if (c.model_preset == "large") c.model = ModelConfig::large();
      else if (c.model_preset != "custom") {
        throw std::runtime_error("model preset must be 'base', 'large' or 'custom'");
      }
    }
    read(model, "num_layers", c.model.num_layers);
    read(model, "model_dim", c.model.model_dim);
    read(model, "num_heads", c.model.num_heads);
    read(model, "max_seq_len", c.model.max_seq_len);
  }
  if (doc.contains("task")) {
    const json& task = doc.at("task");
    expect_keys(task,
                {"kind", "json_path", "count", "size", "word_pool", "color_pool",
                 "book_pool", "task_seed", "split_seed", "train_fraction"},
                "task");
    if (task.contains("kind")) {
      const auto kind = task_kind_from_name(task.at("kind").get<std::string>());
      if (!kind) throw std::runtime_error("unknown task kind: " +
                                          task.at("kind").get<std::string>());
      c.task.kind = *kind;
    }
    read(task, "json_path", c.task.json_path);
    read(task, "count", c.task.count);
    read(task, "size", c.task.size);
    read(task, "word_pool", c.task.gen.word_pool);
    read(task, "color_pool", c.task.gen.color_pool);
    read(task, "book_pool", c.task.gen.book_pool);
    read(task, "task_seed", c.task.task_seed);
    read(task, "split_seed", c.task.split_seed);
    read(task, "train_fraction", c.task.train_fraction);
  }
  if (doc.contains("prompts")) {
    const json& prompts = doc.at("prompts");
    expect_keys(prompts, {"correct", "wrong"}, "prompts");
    read(prompts, "correct", c.prompts.correct_text);
    read(prompts, "wrong", c.prompts.wrong_text);
  }
  validate(c);
  return c;
}

HirConfig load_config(const std::string& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path + ": invalid JSON: " + e.what());
  }
  try {
    return config_from_json(doc);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

std::string default_config_pretty() { return config_to_json(HirConfig{}).dump(2) + "\n"; }

void apply_ablation(HirConfig& config, const std::string& name) {
  if (name == "no-entropy") config.beta = 0.0;
  else if (name == "no-smooth") config.label_smoothing = 0.0;
  else if (name == "no-subsample") config.suboutput = SuboutputGranularity::None;
  else if (name == "no-contrastive") config.alpha = 0.0;
  else throw std::runtime_error("unknown ablation: " + name);
}

void validate(const HirConfig& c) {
  auto require = [](bool ok, const char* message) {
    if (!ok) throw std::runtime_error(std::string("invalid config: ") + message);
  };
  require(c.iterations >= 0, "iterations must be >= 0");
  require(c.sampling_rounds >= 1, "sampling_rounds must be >= 1");
  require(c.train_epochs >= 0, "train_epochs must be >= 0");
  require(c.temperature > 0.0, "temperature must be positive");
  require(c.online_samples_per_iteration >= 1, "online_samples_per_iteration must be >= 1");
  require(c.lr >= 0.0, "lr must be non-negative");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(c.label_smoothing >= 0.0 && c.label_smoothing < 1.0,
          "label_smoothing must be in [0, 1)");
  require(c.alpha >= 0.0, "alpha must be non-negative");
  require(c.beta >= 0.0, "beta must be non-negative");
  require(c.weight_decay >= 0.0, "weight_decay must be non-negative");
  require(c.max_new_tokens >= 1, "max_new_tokens must be >= 1");
  require(c.sampling_threads >= 1, "sampling_threads must be >= 1");
  require(c.model.num_layers >= 1, "num_layers must be >= 1");
  require(c.model.model_dim >= 1, "model_dim must be >= 1");
  require(c.model.num_heads >= 1 && c.model.model_dim % c.model.num_heads == 0,
          "model_dim must be divisible by num_heads");
  require(c.model.max_seq_len >= 4, "max_seq_len must be >= 4");
  require(c.task.count >= 5, "task count must be >= 5");
  require(c.task.train_fraction > 0.0 && c.task.train_fraction < 1.0,
          "train_fraction must be in (0, 1)");
  require(!c.prompts.correct_text.empty() && !c.prompts.wrong_text.empty(),
          "prompt templates must be non-empty");
  require(c.prompts.correct_text != c.prompts.wrong_text,
          "prompt templates must differ");
}

}  // namespace hir
