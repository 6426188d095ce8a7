#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "hir/prompts.hpp"
#include "hir/tasks.hpp"

namespace hir {

inline constexpr const char* kCodeVersion = "hir 0.1.0";

enum class Retention { AppendAcrossIterations, ClearEachIteration };
enum class SuboutputGranularity { Token, None };
enum class Precision { F64, F32 };
enum class Method { Hir, Farl, Sft };

const char* method_name(Method m);
std::optional<Method> method_from_name(const std::string& name);

struct ModelConfig {
  int num_layers = 2;
  int model_dim = 64;
  int num_heads = 4;
  int max_seq_len = 128;
  int vocab_size = 0;  // derived from the task vocabulary at run setup

  static ModelConfig base() { return ModelConfig{}; }
  static ModelConfig large() { return ModelConfig{4, 128, 8, 128, 0}; }
};

struct TaskSpec {
  TaskKind kind = TaskKind::WordSorting;
  std::string json_path;  // used when kind == ExternalJson
  int count = 100;
  int size = 3;
  GenOptions gen;
  std::uint64_t task_seed = 1000;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;

  std::string name() const;
};

// Every knob of a training run. The defaults are the published
// hyperparameters; anything task- or desk-scale-specific is overridden via
// config files.
struct HirConfig {
  int iterations = 50;                    // N
  int sampling_rounds = 1;                // T
  int train_epochs = 10;                  // K: optimizer steps per iteration
  double temperature = 1.0;
  int online_samples_per_iteration = 4;
  double lr = 0.0005;
  int batch_size = 64;
  double label_smoothing = 0.2;
  double alpha = 1.0;                     // contrastive loss coefficient
  double beta = 0.001;                    // entropy regularization coefficient
  double weight_decay = 0.0;
  Retention retention = Retention::AppendAcrossIterations;
  SuboutputGranularity suboutput = SuboutputGranularity::Token;
  int max_new_tokens = 16;
  bool correct_only = false;              // train only on correct-filtered episodes
  bool persist_replay = false;
  int sampling_threads = 1;
  std::uint64_t seed = 0;
  Precision precision = Precision::F64;
  std::string model_preset = "base";
  ModelConfig model;
  TaskSpec task;
  PromptTemplates prompts;
};

nlohmann::json config_to_json(const HirConfig& config);
// Strict: unknown keys are rejected, values are validated.
HirConfig config_from_json(const nlohmann::json& doc);
HirConfig load_config(const std::string& path);
std::string default_config_pretty();

// no-entropy | no-smooth | no-subsample | no-contrastive
void apply_ablation(HirConfig& config, const std::string& name);

void validate(const HirConfig& config);

}  // namespace hir
