#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/eval.hpp"

namespace prunelab {

/// Fixed-point text with `decimals` digits, e.g. 76.33.
std::string format_fixed(double value, int decimals = 2);
/// A fraction in [0, 1] rendered as a percentage cell.
std::string format_accuracy(double fraction);

/// Plain-text grid with left-aligned first column and right-aligned cells.
std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

/// Accuracies and perplexities of one model over the task suite.
struct EvalReport {
  std::string label;
  std::vector<std::string> corpora;
  std::vector<double> perplexity;
  std::vector<std::string> tasks;
  std::vector<double> accuracy;  // fractions
  double mean_accuracy = 0.0;
  std::optional<double> recovery;  // percent of the baseline mean

  /// Fills mean_accuracy, and recovery when a baseline is given.
  void finalize(const EvalReport* baseline = nullptr);
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Baseline plus method rows in the ratio / PPL / accuracies / mean / recovery layout.
struct RecoveryTable {
  EvalReport baseline;
  std::vector<std::pair<std::string, EvalReport>> rows;  // (ratio label, row)

  nlohmann::json to_json() const;
  std::string render() const;
};

std::string render_prompt_matrix(const PromptMatrix& matrix);
std::string render_sweep(const SweepReport& sweep);

/// One published comparison row: percentages as printed, with the printed
/// mean and recovery.
struct ReferenceRow {
  std::string ratio;
  std::string method;
  std::vector<double> perplexity;
  std::vector<double> accuracy;
  double mean = 0.0;
  double recovery = 0.0;
};

struct ReferenceTable {
  std::vector<std::string> corpora;
  std::vector<std::string> tasks;
  std::vector<double> baseline;
  double baseline_mean = 0.0;
  std::vector<ReferenceRow> rows;
};

/// Published 7B comparison grid at 20% and 50% ratio.
const ReferenceTable& reference_recovery_table();
/// Published shot-count sweep for the 20% model.
SweepReport reference_shot_sweep();

}  // namespace prunelab
