#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prunelab/model.hpp"
#include "prunelab/tasks.hpp"

namespace prunelab {

struct OptionScores {
  std::size_t predicted = 0;
  std::vector<double> scores;  // mean log-likelihood per option token
};

/// Anything that can rank answer options for an assembled query.
using Scorer = std::function<OptionScores(std::string_view query, std::span<const std::string> options)>;

/// Length-normalized log-likelihood of each option conditioned on
/// [bos] + query; argmax, ties to the lowest index. Contexts longer than the
/// model window are truncated from the left.
template <typename T>
OptionScores score_classification(const TransformerModel<T>& model, std::string_view query,
                                  std::span<const std::string> options, const ProjectionHook<T>* hook = nullptr);

/// Pick the argmax of `scores`, lowest index on ties.
OptionScores predict_from_scores(std::vector<double> scores);

/// The returned scorer borrows `model` and `hook`.
template <typename T>
Scorer make_scorer(const TransformerModel<T>& model, const ProjectionHook<T>* hook = nullptr);

/// Seed used to draw the shots of one eval item; depends on the item content,
/// not its position.
std::uint64_t item_seed(std::uint64_t seed, const ClassificationItem& item);

/// K distinct shots from the train pool for `query`.
std::vector<ClassificationItem> draw_shots(const TaskDataset& task, const ClassificationItem& query, std::size_t shots,
                                           std::uint64_t seed);

/// Fraction of eval items predicted correctly with K shots per item.
double evaluate_accuracy(const Scorer& scorer, const TaskDataset& task, const PromptTemplate& tmpl, std::size_t shots,
                         std::uint64_t seed);

template <typename T>
double evaluate_accuracy(const TransformerModel<T>& model, const TaskDataset& task, const PromptTemplate& tmpl,
                         std::size_t shots, std::uint64_t seed, const ProjectionHook<T>* hook = nullptr) {
  return evaluate_accuracy(make_scorer(model, hook), task, tmpl, shots, seed);
}

/// exp of the mean next-token NLL over consecutive non-overlapping windows.
template <typename T>
double evaluate_perplexity(const TransformerModel<T>& model, std::string_view corpus, std::size_t window,
                           const ProjectionHook<T>* hook = nullptr);

struct PromptMatrix {
  std::vector<std::string> templates;  // rows
  std::vector<std::string> tasks;      // columns
  std::vector<std::vector<double>> accuracy;
  std::vector<std::size_t> best_template;  // per task

  nlohmann::json to_json() const;
};

/// Accuracy of every (template, task) pair. Row r is scored with
/// `scorer_for_row(r)`, so each prompt row may use its own tuned model.
PromptMatrix prompt_task_matrix(const std::function<Scorer(std::size_t row)>& scorer_for_row,
                                const std::vector<PromptTemplate>& templates, const std::vector<TaskDataset>& tasks,
                                std::size_t shots, std::uint64_t seed);

PromptMatrix prompt_task_matrix(const Scorer& scorer, const std::vector<PromptTemplate>& templates,
                                const std::vector<TaskDataset>& tasks, std::size_t shots, std::uint64_t seed);

/// 100 * mean(accuracies) / mean(baseline).
double recovery_rate(std::span<const double> accuracies, std::span<const double> baseline);

struct SweepRow {
  std::size_t shots = 0;
  std::vector<double> perplexity;  // per corpus
  std::vector<double> accuracy;    // per task
  double average = 0.0;            // mean accuracy
};

struct SweepReport {
  std::vector<std::string> corpora;
  std::vector<std::string> tasks;
  std::vector<SweepRow> rows;  // ascending shots

  nlohmann::json to_json() const;
};

/// Runs `run_one(K)` for each K and sorts the rows by K; average is filled in.
SweepReport shots_sweep(const std::function<SweepRow(std::size_t shots)>& run_one, std::vector<std::size_t> shot_counts,
                        std::vector<std::string> corpora, std::vector<std::string> tasks);

}  // namespace prunelab
