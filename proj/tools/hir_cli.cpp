// Command-line front end: training runs, evaluation, task generation,
// sweeps over methods/seeds, and report aggregation.

#include <unistd.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hir/baselines.hpp"
#include "hir/checkpoint.hpp"
#include "hir/config.hpp"
#include "hir/io.hpp"
#include "hir/metrics.hpp"
#include "hir/trainer.hpp"

namespace {

using namespace hir;

struct TrainOptions {
  std::string method = "hir";
  std::string task;
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> ablations;
  std::int64_t seed = -1;
  int iterations = -1;
  bool has_seed() const { return seed >= 0; }
};

std::string output_root() {
  const char* env = std::getenv("HIR_OUTPUT_ROOT");
  return env != nullptr && *env != '\0' ? env : "runs";
}

void apply_task_option(HirConfig& config, const std::string& task) {
  if (task.empty()) return;
  if (task.size() > 5 && task.substr(task.size() - 5) == ".json") {
    config.task.kind = TaskKind::ExternalJson;
    config.task.json_path = task;
    return;
  }
  // accept either plain kind names or kind-<k> for the parametrized ones
  std::string name = task;
  int size = -1;
  const auto dash = task.find_last_of('-');
  if (dash != std::string::npos && dash + 1 < task.size() &&
      std::isdigit(static_cast<unsigned char>(task[dash + 1]))) {
    name = task.substr(0, dash);
    size = std::stoi(task.substr(dash + 1));
  }
  const auto kind = task_kind_from_name(name);
  if (!kind) throw std::runtime_error("unknown task: " + task);
  config.task.kind = *kind;
  if (size > 0) config.task.size = size;
}

HirConfig resolve_config(const TrainOptions& opts) {
  HirConfig config = opts.config_path.empty() ? HirConfig{} : load_config(opts.config_path);
  apply_task_option(config, opts.task);
  if (opts.has_seed()) config.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.iterations >= 0) config.iterations = opts.iterations;
  for (const auto& ablation : opts.ablations) apply_ablation(config, ablation);
  validate(config);
  return config;
}

std::string replay_to_jsonl(const ReplayDataset& replay, const PromptTemplates& templates) {
  std::string out;
  for (const auto& ep : replay.episodes) {
    nlohmann::json rec;
    rec["instance_id"] = ep.instance_id;
    rec["iteration"] = ep.iteration;
    rec["prompt"] = templates.text(ep.prompt);
    rec["output_ids"] = ep.output_ids;
    rec["output_text"] = ep.output_text;
    rec["sample_seed"] = ep.sample_seed;
    rec["answer_correct"] = ep.answer_correct;
    out += rec.dump() + "\n";
  }
  return out;
}

template <class Scalar>
int run_train_typed(const HirConfig& config, Method method, const std::string& out_dir) {
  const PreparedTask task = prepare_task(config);
  std::string warnings;

  RunManifest manifest;
  manifest.method = method_name(method);
  manifest.task_name = config.task.name();
  manifest.seed = config.seed;
  manifest.code_version = kCodeVersion;
  manifest.config = config_to_json(config);
  manifest.started_at = current_timestamp();

  const auto t0 = std::chrono::steady_clock::now();
  RunResult<Scalar> result;
  switch (method) {
    case Method::Hir: result = run_hir<Scalar>(config, task, &warnings); break;
    case Method::Farl: result = run_farl<Scalar>(config, task, &warnings); break;
    case Method::Sft: result = run_sft<Scalar>(config, task, &warnings); break;
  }
  manifest.wall_clock_seconds_total =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest.finished_at = current_timestamp();
  manifest.final_accuracy = result.metrics.back().eval_accuracy;
  manifest.outputs = {"metrics.csv", "timings.csv", "checkpoint.ckpt"};
  if (config.persist_replay && method != Method::Sft) {
    manifest.outputs.push_back("replay.jsonl");
  }

  atomic_write_file(out_dir + "/metrics.csv", metrics_to_csv(result.metrics));
  atomic_write_file(out_dir + "/timings.csv", timings_to_csv(result.metrics));
  save_checkpoint(out_dir + "/checkpoint.ckpt", result.model, task.vocab);
  if (config.persist_replay && method != Method::Sft) {
    atomic_write_file(out_dir + "/replay.jsonl", replay_to_jsonl(result.replay, config.prompts));
  }
  // the manifest lands last: its presence marks a complete run
  atomic_write_file(out_dir + "/manifest.json", manifest_to_json(manifest).dump(2) + "\n");

  if (!warnings.empty()) std::cerr << warnings;
  std::cout << manifest.method << " on " << manifest.task_name << " seed " << config.seed
            << ": final accuracy " << format_double(manifest.final_accuracy) << " after "
            << config.iterations << " iterations (" << out_dir << ")\n";
  return 0;
}

int cmd_train(const TrainOptions& opts) {
  const auto method = method_from_name(opts.method);
  if (!method) throw std::runtime_error("unknown method: " + opts.method);
  const HirConfig config = resolve_config(opts);
  std::string out_dir = opts.out_dir;
  if (out_dir.empty()) {
    out_dir = output_root() + "/" + opts.method + "-" + config.task.name() + "-seed" +
              std::to_string(config.seed);
  }
  std::filesystem::create_directories(out_dir);
  if (config.precision == Precision::F32) {
    return run_train_typed<float>(config, *method, out_dir);
  }
  return run_train_typed<double>(config, *method, out_dir);
}

int cmd_eval(const std::string& checkpoint_path, const TrainOptions& opts) {
  const HirConfig config = resolve_config(opts);
  const CheckpointData data = load_checkpoint(checkpoint_path);
  const Vocab vocab = data.rebuild_vocab();

  TaskSet set;
  if (config.task.kind == TaskKind::ExternalJson) {
    set = load_bigbench_json(config.task.json_path);
    set.split_seed = config.task.split_seed;
    set.train_fraction = config.task.train_fraction;
  } else {
    set = generate_taskset(config.task.kind, config.task.count, config.task.size,
                           config.task.task_seed, config.task.gen, config.task.split_seed,
                           config.task.train_fraction);
  }
  auto [train, eval] = split(set);
  (void)train;
  const auto views = make_eval_views(eval);

  double accuracy = 0.0;
  if (data.precision == Precision::F64) {
    const auto model = data.materialize<double>();
    accuracy = evaluate(model, views, vocab, config.max_new_tokens);
  } else {
    const auto model = data.materialize<float>();
    accuracy = evaluate(model, views, vocab, config.max_new_tokens);
  }
  std::cout << "accuracy " << format_double(accuracy) << " on " << views.size()
            << " held-out instances of " << config.task.name() << "\n";
  return 0;
}

int cmd_generate(const std::string& task, int count, int size, std::uint64_t seed,
                 const std::string& out_path, const std::string& config_path) {
  HirConfig config = config_path.empty() ? HirConfig{} : load_config(config_path);
  apply_task_option(config, task);
  if (size > 0) config.task.size = size;
  const TaskSet set = generate_taskset(config.task.kind, count, config.task.size, seed,
                                       config.task.gen);
  save_bigbench_json(set, out_path);
  std::cout << "wrote " << set.instances.size() << " instances to " << out_path << "\n";
  return 0;
}

int cmd_sweep(const std::vector<std::string>& methods, const std::vector<std::int64_t>& seeds,
              int jobs, const TrainOptions& base) {
  // Each run is an independent child process with its own output directory.
  std::vector<std::vector<std::string>> commands;
  const std::string root = base.out_dir.empty() ? output_root() + "/sweep" : base.out_dir;
  char exe_buf[4096];
  const ssize_t exe_len = readlink("/proc/self/exe", exe_buf, sizeof(exe_buf) - 1);
  if (exe_len <= 0) throw std::runtime_error("cannot resolve own executable path");
  const std::string exe(exe_buf, static_cast<std::size_t>(exe_len));

  for (const auto& method : methods) {
    if (!method_from_name(method)) throw std::runtime_error("unknown method: " + method);
    for (const auto seed : seeds) {
      std::vector<std::string> cmd = {exe, "train", "--method", method,
                                      "--seed", std::to_string(seed)};
      if (!base.task.empty()) {
        cmd.push_back("--task");
        cmd.push_back(base.task);
      }
      if (!base.config_path.empty()) {
        cmd.push_back("--config");
        cmd.push_back(base.config_path);
      }
      for (const auto& a : base.ablations) {
        cmd.push_back("--ablate");
        cmd.push_back(a);
      }
      cmd.push_back("--out");
      cmd.push_back(root + "/" + method + "-seed" + std::to_string(seed));
      commands.push_back(std::move(cmd));
    }
  }

  std::size_t next = 0;
  int running = 0;
  int failures = 0;
  const auto launch = [&](const std::vector<std::string>& cmd) {
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      std::vector<char*> argv;
      for (const auto& part : cmd) argv.push_back(const_cast<char*>(part.c_str()));
      argv.push_back(nullptr);
      execv(argv[0], argv.data());
      _exit(127);
    }
    ++running;
  };
  while (next < commands.size() || running > 0) {
    while (next < commands.size() && running < jobs) launch(commands[next++]);
    int status = 0;
    if (waitpid(-1, &status, 0) > 0) {
      --running;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) ++failures;
    }
  }
  std::cout << "sweep finished: " << commands.size() - static_cast<std::size_t>(failures)
            << "/" << commands.size() << " runs succeeded under " << root << "\n";
  return failures == 0 ? 0 : 2;
}

int cmd_report(const std::string& runs_dir) {
  namespace fs = std::filesystem;
  std::vector<RunRecord> runs;
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    const auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
      std::cerr << "skipping " << dir.string() << ": no manifest (incomplete run)\n";
      continue;
    }
    const auto manifest = manifest_from_json(nlohmann::json::parse(read_file(manifest_path)));
    RunRecord rec;
    rec.method = manifest.method;
    rec.task = manifest.task_name;
    rec.seed = manifest.seed;
    rec.rows = metrics_from_csv(read_file((dir / "metrics.csv").string()));
    runs.push_back(std::move(rec));
  }
  if (runs.empty()) throw std::runtime_error("no finished runs under " + runs_dir);

  emit_plot_data(runs, runs_dir);
  std::cout << "method, task, seeds, mean final accuracy\n";
  for (const auto& s : summarize_runs(runs)) {
    std::cout << s.method << ", " << s.task << ", " << s.num_seeds << ", "
              << format_double(s.mean_final_accuracy) << "\n";
  }
  std::cout << "plot data written to " << runs_dir << "/plot_data.csv and summary.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hindsight instruction relabeling at desk scale"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults,
               "print the default configuration as JSON and exit");

  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "train a model with hir, farl or sft");
  train->add_option("--method", train_opts.method, "hir | farl | sft");
  train->add_option("--task", train_opts.task,
                    "task kind (e.g. word-sorting, tracking-shuffled-objects-3) or a "
                    "BigBench-style JSON file");
  train->add_option("--config", train_opts.config_path, "JSON config file");
  train->add_option("--seed", train_opts.seed, "run seed (overrides config)");
  train->add_option("--iterations", train_opts.iterations, "iteration count (overrides config)");
  train->add_option("--ablate", train_opts.ablations,
                    "no-entropy | no-smooth | no-subsample | no-contrastive");
  train->add_option("--out", train_opts.out_dir, "output directory");

  std::string eval_checkpoint;
  TrainOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a task's held-out split");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--task", eval_opts.task, "task kind or JSON file");
  eval_cmd->add_option("--config", eval_opts.config_path, "JSON config file");

  std::string gen_task = "word-sorting";
  int gen_count = 100;
  int gen_size = -1;
  std::int64_t gen_seed = 1000;
  std::string gen_out;
  std::string gen_config;
  auto* gen = app.add_subcommand("generate-tasks", "emit BigBench-style JSON task files");
  gen->add_option("--task", gen_task, "task kind");
  gen->add_option("--count", gen_count, "number of instances");
  gen->add_option("--size", gen_size, "instance size (words / items / objects)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output JSON path")->required();
  gen->add_option("--config", gen_config, "JSON config file for pool options");

  std::vector<std::string> sweep_methods;
  std::vector<std::int64_t> sweep_seeds;
  int sweep_jobs = 1;
  TrainOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "launch a grid of training runs as processes");
  sweep->add_option("--methods", sweep_methods, "methods to run")->delimiter(',')->required();
  sweep->add_option("--seeds", sweep_seeds, "seeds to run")->delimiter(',')->required();
  sweep->add_option("--jobs", sweep_jobs, "concurrent processes");
  sweep->add_option("--task", sweep_opts.task, "task kind or JSON file");
  sweep->add_option("--config", sweep_opts.config_path, "JSON config file");
  sweep->add_option("--ablate", sweep_opts.ablations, "ablations applied to every run");
  sweep->add_option("--out", sweep_opts.out_dir, "sweep output root");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "aggregate finished runs into tables");
  report->add_option("--runs", report_dir, "directory holding run subdirectories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (print_defaults) {
      std::cout << default_config_pretty();
      return 0;
    }
    if (*train) return cmd_train(train_opts);
    if (*eval_cmd) return cmd_eval(eval_checkpoint, eval_opts);
    if (*gen) {
      return cmd_generate(gen_task, gen_count, gen_size,
                          static_cast<std::uint64_t>(gen_seed), gen_out, gen_config);
    }
    if (*sweep) {
      if (sweep_jobs < 1) sweep_jobs = 1;
      return cmd_sweep(sweep_methods, sweep_seeds, sweep_jobs, sweep_opts);
    }
    if (*report) return cmd_report(report_dir);
    std::cout << app.help();
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
