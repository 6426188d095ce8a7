#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace hir {

// One evaluation row per iteration. wall_clock_seconds is reported in the
// timing sidecar, never in metrics.csv, so repeated runs stay byte-identical.
struct MetricsRow {
  int iteration = 0;
  double eval_accuracy = 0.0;
  double loss_supervised = 0.0;
  double loss_contrastive = 0.0;
  double loss_entropy = 0.0;
  double loss_total = 0.0;
  long long replay_size = 0;
  double correct_fraction = 0.0;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
};

std::string format_double(double v);  // shortest exact round-trip text

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::string timings_to_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> metrics_from_csv(const std::string& text);

struct RunManifest {
  std::string method;
  std::string task_name;
  std::uint64_t seed = 0;
  std::string code_version;
  nlohmann::json config;  // resolved snapshot, sufficient to reproduce the run
  std::string started_at;
  std::string finished_at;
  double wall_clock_seconds_total = 0.0;
  double final_accuracy = 0.0;
  std::vector<std::string> outputs;  // paths relative to the run directory
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& doc);

struct RunRecord {
  std::string method;
  std::string task;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

struct SummaryRow {
  std::string method;
  std::string task;
  int num_seeds = 0;
  double mean_final_accuracy = 0.0;
};

std::vector<SummaryRow> summarize_runs(const std::vector<RunRecord>& runs);

// Long-format rows (method, task, seed, iteration, metric, value) plus the
// across-seed summary table. Throws on empty input.
void emit_plot_data(const std::vector<RunRecord>& runs, const std::string& out_dir);

std::string current_timestamp();

}  // namespace hir
