#include "prunelab/reports.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace prunelab {

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

std::string format_accuracy(double fraction) { return format_fixed(100.0 * fraction, 2); }

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size(), 0);
  auto grow = [&](const std::vector<std::string>& row) {
    if (row.size() != header.size()) throw ContractError("table row has the wrong number of cells");
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  };
  grow(header);
  for (const auto& r : rows) grow(r);
  auto line = [&](const std::vector<std::string>& row) {
    std::string out;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::string pad(width[c] - row[c].size(), ' ');
      if (c) out += "  ";
      out += c == 0 ? row[c] + pad : pad + row[c];
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out + "\n";
  };
  std::size_t total = 0;
  for (auto w : width) total += w;
  total += 2 * (width.size() - 1);
  std::string text = line(header) + std::string(total, '-') + "\n";
  for (const auto& r : rows) text += line(r);
  return text;
}

void EvalReport::finalize(const EvalReport* baseline) {
  mean_accuracy = accuracy.empty() ? 0.0
                                   : std::accumulate(accuracy.begin(), accuracy.end(), 0.0) /
                                         static_cast<double>(accuracy.size());
  if (baseline) recovery = recovery_rate(accuracy, baseline->accuracy);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j = {{"label", label},
                      {"corpora", corpora},
                      {"perplexity", perplexity},
                      {"tasks", tasks},
                      {"accuracy", accuracy},
                      {"mean_accuracy", mean_accuracy}};
  j["recovery_rate"] = recovery ? nlohmann::json(*recovery) : nlohmann::json(nullptr);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.label = j.at("label").get<std::string>();
  r.corpora = j.at("corpora").get<std::vector<std::string>>();
  r.perplexity = j.at("perplexity").get<std::vector<double>>();
  r.tasks = j.at("tasks").get<std::vector<std::string>>();
  r.accuracy = j.at("accuracy").get<std::vector<double>>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  if (j.contains("recovery_rate") && !j["recovery_rate"].is_null()) r.recovery = j["recovery_rate"].get<double>();
  return r;
}

nlohmann::json RecoveryTable::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& [ratio, row] : rows) {
    auto j = row.to_json();
    j["ratio"] = ratio;
    rs.push_back(j);
  }
  return {{"baseline", baseline.to_json()}, {"rows", rs}};
}

std::string RecoveryTable::render() const {
  std::vector<std::string> header{"Ratio", "Method"};
  for (const auto& c : baseline.corpora) header.push_back(c + " PPL");
  for (const auto& t : baseline.tasks) header.push_back(t);
  header.push_back("Mean");
  header.push_back("Recovery %");
  auto cells = [&](const std::string& ratio, const EvalReport& r) {
    std::vector<std::string> row{ratio, r.label};
    for (std::size_t i = 0; i < baseline.corpora.size(); ++i) {
      row.push_back(i < r.perplexity.size() ? format_fixed(r.perplexity[i]) : "-");
    }
    for (std::size_t i = 0; i < baseline.tasks.size(); ++i) {
      row.push_back(i < r.accuracy.size() ? format_accuracy(r.accuracy[i]) : "-");
    }
    row.push_back(format_accuracy(r.mean_accuracy));
    row.push_back(r.recovery ? format_fixed(*r.recovery) : "-");
    return row;
  };
  std::vector<std::vector<std::string>> body{cells("0%", baseline)};
  for (const auto& [ratio, row] : rows) body.push_back(cells(ratio, row));
  return render_table(header, body);
}

std::string render_prompt_matrix(const PromptMatrix& m) {
  std::vector<std::string> header{"Prompt / Task"};
  header.insert(header.end(), m.tasks.begin(), m.tasks.end());
  std::vector<std::vector<std::string>> body;
  for (std::size_t r = 0; r < m.templates.size(); ++r) {
    std::vector<std::string> row{m.templates[r]};
    for (std::size_t c = 0; c < m.tasks.size(); ++c) {
      row.push_back(format_accuracy(m.accuracy[r][c]) + (m.best_template[c] == r ? "*" : " "));
    }
    body.push_back(std::move(row));
  }
  return render_table(header, body) + "* best prompt for the task\n";
}

std::string render_sweep(const SweepReport& s) {
  std::vector<std::string> header{"Shots (K)"};
  for (const auto& c : s.corpora) header.push_back(c + " PPL");
  header.insert(header.end(), s.tasks.begin(), s.tasks.end());
  header.push_back("Average");
  std::vector<std::vector<std::string>> body;
  for (const auto& r : s.rows) {
    std::vector<std::string> row{std::to_string(r.shots)};
    for (auto p : r.perplexity) row.push_back(format_fixed(p));
    for (auto a : r.accuracy) row.push_back(format_accuracy(a));
    row.push_back(format_accuracy(r.average));
    body.push_back(std::move(row));
  }
  return render_table(header, body);
}

const ReferenceTable& reference_recovery_table() {
  static const ReferenceTable table = [] {
    ReferenceTable t;
    t.corpora = {"WikiText2", "PTB"};
    t.tasks = {"BoolQ", "PIQA", "HellaSwag", "WinoGrande", "ARC-e", "ARC-c", "OBQA"};
    t.baseline = {76.5, 79.8, 76.1, 70.1, 72.8, 47.6, 57.2};
    t.baseline_mean = 68.59;
    t.rows = {
        {"20%", "Wanda", {18.43, 33.16}, {65.75, 74.70, 64.52, 59.35, 60.65, 36.26, 39.40}, 57.23, 83.43},
        {"20%", "FLAP", {17.0, 30.1}, {69.63, 76.82, 71.20, 68.35, 69.91, 39.25, 39.40}, 62.08, 90.50},
        {"20%", "LLM-Pruner", {17.58, 30.11}, {64.62, 77.20, 68.80, 63.14, 64.31, 36.77, 39.80}, 59.23, 86.35},
        {"20%", "Shortened LLaMA", {20.2, 32.3}, {75.7, 75.7, 71.5, 69.1, 69.9, 41.6, 40.8}, 63.5, 92.57},
        {"20%", "LoRAPrune", {16.80, 28.75}, {65.62, 79.31, 70.00, 62.76, 65.87, 37.69, 39.14}, 60.05, 87.55},
        {"20%", "task-prompted LoRA", {19.09, 34.21}, {76.33, 79, 71.16, 69.96, 70.80, 43.36, 48.8}, 65.63, 95.68},
        {"50%", "Wanda", {43.89, 85.87}, {50.90, 57.38, 38.12, 55.98, 42.68, 34.20, 38.78}, 45.43, 66.23},
        {"50%", "FLAP", {29.7, 53.2}, {60.21, 67.52, 52.14, 57.54, 49.66, 29.95, 35.60}, 50.37, 73.44},
        {"50%", "LLM-Pruner", {38.12, 66.35}, {60.28, 69.31, 47.06, 53.43, 45.96, 29.18, 35.60}, 48.69, 70.99},
        {"50%", "Shortened LLaMA", {33.2, 58.5}, {62.5, 69.2, 60.7, 66.8, 57.4, 34.5, 36.8}, 55.4, 80.83},
        {"50%", "LoRAPrune", {30.12, 50.30}, {61.88, 71.53, 47.86, 55.01, 45.13, 31.62, 34.98}, 49.71, 72.47},
        {"50%", "task-prompted LoRA", {39.26, 71.96}, {76.17, 72.01, 61.7, 67.01, 59.25, 36.95, 42.4}, 59.36, 86.54},
    };
    return t;
  }();
  return table;
}

SweepReport reference_shot_sweep() {
  struct Printed {
    std::size_t k;
    double ppl[2];
    double acc[7];
  };
  static const Printed printed[] = {
      {10, {19.09, 34.21}, {67.06, 75.68, 66.80, 68.83, 60.94, 38.52, 44.00}},
      {20, {17.58, 30.66}, {73.62, 77.20, 68.80, 68.14, 62.31, 39.77, 45.80}},
      {30, {19.09, 30.26}, {74.00, 78.66, 69.75, 69.54, 64.39, 40.20, 45.60}},
      {40, {19.39, 30.57}, {75.24, 79.00, 70.52, 69.85, 65.48, 42.01, 46.00}},
      {50, {17.48, 70.57}, {76.33, 78.95, 71.16, 69.96, 66.80, 43.36, 47.50}},
      {100, {17.67, 30.60}, {74.39, 78.83, 71.09, 69.96, 66.05, 43.32, 47.60}},
      {200, {17.74, 30.75}, {75.75, 78.74, 70.28, 69.95, 66.30, 43.30, 48.80}},
  };
  std::vector<std::size_t> ks;
  for (const auto& p : printed) ks.push_back(p.k);
  const auto& ref = reference_recovery_table();
  return shots_sweep(
      [&](std::size_t k) {
        SweepRow row;
        for (const auto& p : printed) {
          if (p.k != k) continue;
          row.perplexity.assign(p.ppl, p.ppl + 2);
          for (double a : p.acc) row.accuracy.push_back(a / 100.0);
        }
        return row;
      },
      ks, ref.corpora, ref.tasks);
}

}  // namespace prunelab
