#include "hir/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <map>
#include <sstream>
#include <stdexcept>

#include "hir/io.hpp"

namespace hir {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

constexpr const char* kMetricsHeader =
    "iteration,eval_accuracy,loss_supervised,loss_contrastive,loss_entropy,"
    "loss_total,replay_size,correct_fraction,seed";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  return fields;
}

}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_double(r.eval_accuracy) + "," +
           format_double(r.loss_supervised) + "," + format_double(r.loss_contrastive) + "," +
           format_double(r.loss_entropy) + "," + format_double(r.loss_total) + "," +
           std::to_string(r.replay_size) + "," + format_double(r.correct_fraction) + "," +
           std::to_string(r.seed) + "\n";
  }
  return out;
}

std::string timings_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "iteration,wall_clock_seconds\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iteration) + "," + format_double(r.wall_clock_seconds) + "\n";
  }
  return out;
}

std::vector<MetricsRow> metrics_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::runtime_error("unrecognized metrics CSV header");
  }
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 9) throw std::runtime_error("malformed metrics CSV row: " + line);
    MetricsRow r;
    r.iteration = std::stoi(f[0]);
    r.eval_accuracy = std::stod(f[1]);
    r.loss_supervised = std::stod(f[2]);
    r.loss_contrastive = std::stod(f[3]);
    r.loss_entropy = std::stod(f[4]);
    r.loss_total = std::stod(f[5]);
    r.replay_size = std::stoll(f[6]);
    r.correct_fraction = std::stod(f[7]);
    r.seed = std::stoull(f[8]);
    rows.push_back(r);
  }
  return rows;
}

nlohmann::json manifest_to_json(const RunManifest& m) {
  nlohmann::json doc;
  doc["method"] = m.method;
  doc["task"] = m.task_name;
  doc["seed"] = m.seed;
  doc["code_version"] = m.code_version;
  doc["config"] = m.config;
  doc["started_at"] = m.started_at;
  doc["finished_at"] = m.finished_at;
  doc["wall_clock_seconds_total"] = m.wall_clock_seconds_total;
  doc["final_accuracy"] = m.final_accuracy;
  doc["outputs"] = m.outputs;
  return doc;
}

RunManifest manifest_from_json(const nlohmann::json& doc) {
  RunManifest m;
  m.method = doc.at("method").get<std::string>();
  m.task_name = doc.at("task").get<std::string>();
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.code_version = doc.at("code_version").get<std::string>();
  m.config = doc.at("config");
  m.started_at = doc.at("started_at").get<std::string>();
  m.finished_at = doc.at("finished_at").get<std::string>();
  m.wall_clock_seconds_total = doc.at("wall_clock_seconds_total").get<double>();
  m.final_accuracy = doc.at("final_accuracy").get<double>();
  m.outputs = doc.at("outputs").get<std::vector<std::string>>();
  return m;
}

std::vector<SummaryRow> summarize_runs(const std::vector<RunRecord>& runs) {
  if (runs.empty()) throw std::invalid_argument("no runs to summarize");
  std::map<std::pair<std::string, std::string>, std::pair<int, double>> acc;
  for (const auto& run : runs) {
    if (run.rows.empty()) throw std::invalid_argument("run without metrics rows");
    auto& slot = acc[{run.method, run.task}];
    slot.first += 1;
    slot.second += run.rows.back().eval_accuracy;
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, value] : acc) {
    out.push_back({key.first, key.second, value.first, value.second / value.first});
  }
  return out;
}

void emit_plot_data(const std::vector<RunRecord>& runs, const std::string& out_dir) {
  if (runs.empty()) throw std::invalid_argument("no runs to plot");
  std::string rows = "method,task,seed,iteration,metric,value\n";
  for (const auto& run : runs) {
    for (const auto& r : run.rows) {
      const auto prefix = run.method + "," + run.task + "," + std::to_string(run.seed) + "," +
                          std::to_string(r.iteration) + ",";
      rows += prefix + "eval_accuracy," + format_double(r.eval_accuracy) + "\n";
      rows += prefix + "loss_supervised," + format_double(r.loss_supervised) + "\n";
      rows += prefix + "loss_contrastive," + format_double(r.loss_contrastive) + "\n";
      rows += prefix + "loss_entropy," + format_double(r.loss_entropy) + "\n";
      rows += prefix + "loss_total," + format_double(r.loss_total) + "\n";
      rows += prefix + "replay_size," + std::to_string(r.replay_size) + "\n";
      rows += prefix + "correct_fraction," + format_double(r.correct_fraction) + "\n";
    }
  }
  atomic_write_file(out_dir + "/plot_data.csv", rows);

  std::string summary = "method,task,num_seeds,mean_final_accuracy\n";
  for (const auto& s : summarize_runs(runs)) {
    summary += s.method + "," + s.task + "," + std::to_string(s.num_seeds) + "," +
               format_double(s.mean_final_accuracy) + "\n";
  }
  atomic_write_file(out_dir + "/summary.csv", summary);
}

std::string current_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace hir
