#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace prunelab {

struct ClassificationItem {
  std::string context;
  std::string question;
  std::vector<std::string> options;
  std::size_t gold = 0;

  const std::string& answer() const { return options.at(gold); }
  friend bool operator==(const ClassificationItem&, const ClassificationItem&) = default;
};

struct TaskDataset {
  std::string id;
  std::vector<ClassificationItem> train;  // shot pool
  std::vector<ClassificationItem> eval;   // held out
  std::vector<std::string> texts;         // language-modelling items

  /// Gold indices in range and the two splits disjoint.
  void validate() const;
};

/// Text with {context}, {question}, {options} and {answer} placeholders.
/// Everything from {answer} onward is dropped in the query form.
struct PromptTemplate {
  std::string id;
  std::string instruction;
  std::string body;
  std::string separator = "\n";

  std::string render_solved(const ClassificationItem& item) const;
  std::string render_query(const ClassificationItem& item) const;
};

/// instruction, then each solved shot, then the query, joined by the separator.
std::string assemble_few_shot(const PromptTemplate& tmpl, std::span<const ClassificationItem> shots,
                              const ClassificationItem& query);

// Synthetic desk-scale tasks: pattern completion, copy with distractor,
// parity of markers, keyword lookup. Difficulty 1..3 grows the cycle period,
// the copy length, the marker count or the number of keys.
std::vector<std::string> synthetic_task_names();
ClassificationItem make_synthetic_item(const std::string& task, std::uint64_t seed, std::size_t difficulty = 2);
TaskDataset make_synthetic_task(const std::string& task, std::size_t n_train, std::size_t n_eval, std::uint64_t seed,
                                std::size_t difficulty = 2);
PromptTemplate default_template(const std::string& task);

/// Solved renderings of freshly drawn items from every named task, one per line.
std::string synthetic_corpus(const std::vector<std::string>& tasks, std::size_t items, std::uint64_t seed);

/// JSON lines, one of {context, options[], gold[, question, split]} or {text}
/// per line. Items without a split field land in eval.
TaskDataset load_jsonl(const std::filesystem::path& path, std::string id);
void save_jsonl(const TaskDataset& dataset, const std::filesystem::path& path);

}  // namespace prunelab
