#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/importance.hpp"
#include "prunelab/model.hpp"
#include "prunelab/tasks.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

/// A failure inside one pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error(stage + ": " + cause), stage_(std::move(stage)), cause_(cause) {}
  const std::string& stage() const noexcept { return stage_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string stage_;
  std::string cause_;
};

struct PretrainSpec {
  std::size_t items_per_task = 2000;
  std::size_t steps = 1000;
  double lr = 3e-3;
  std::size_t warmup = 50;
  std::size_t batch = 8;
  double context_weight = 0.25;
};

struct CalibrationSpec {
  std::size_t count = 20;
  std::size_t seq_len = 128;
  std::size_t corpus_items = 200;
};

struct PruneSpec {
  double ratio = 0.5;
  SelectPolicy policy = SelectPolicy::per_layer;
  std::vector<std::size_t> protected_layers;
  ScoreMethod method = ScoreMethod::taylor;
};

struct RecoverySpec {
  TrainConfig train;  // lr, warmup, batch, epochs; seed is derived per task
  std::size_t shots = 50;
  std::size_t rank = 8;
  /// Loss weight of prompt tokens; 0 masks everything but the answers.
  double context_weight = 0.0;
  std::size_t items_per_sequence = 3;
};

struct EvalSpec {
  std::vector<std::string> tasks = {"pattern", "copy", "parity", "keyword"};
  std::map<std::string, std::size_t> difficulty;  // default 2
  std::size_t train_pool = 400;
  std::size_t eval_items = 300;
  /// Solved examples placed in each evaluation prompt.
  std::size_t in_context_shots = 0;
  std::vector<std::size_t> sweep_shots = {10, 20, 50};
  std::size_t ppl_window = 128;
  std::size_t ppl_items = 40;
  std::vector<std::string> corpora = {"heldout-a", "heldout-b"};
};

struct StageFlags {
  bool pretrain = true;
  bool baseline = true;
  bool prune = true;
  bool finetune = true;
  bool eval = true;
  bool prompt_matrix = true;
  bool sweep = true;
};

struct RunConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  PretrainSpec pretrain;
  CalibrationSpec calibration;
  PruneSpec prune;
  RecoverySpec recovery;
  EvalSpec eval;
  StageFlags stages;
  std::filesystem::path out_dir = "prunelab-run";
  /// Start from this checkpoint instead of building and pretraining.
  std::optional<std::filesystem::path> base_checkpoint;

  /// Throws ContractError on inconsistent settings or missing input files.
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  /// Reads a JSON file; PRUNELAB_SEED, when set, replaces the seed.
  static RunConfig load(const std::filesystem::path& path);
};

/// Apply PRUNELAB_SEED if present.
void apply_seed_override(RunConfig& config);

/// Independent stream seed for a labelled purpose.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& label);

struct RunResult {
  std::vector<std::string> stages_run;
  std::vector<std::filesystem::path> artifacts;
};

/// build+pretrain, baseline eval, prune, finetune, eval, prompt matrix and
/// shot sweep, in that order. Each stage writes its checkpoint or report
/// under out_dir; a failing stage leaves its outputs with a `.partial`
/// suffix and throws StageError. Skipped stages read their outputs from
/// out_dir instead.
RunResult run_pipeline(const RunConfig& config);

// Pieces shared by the CLI subcommands.

/// Dataset for `task` under this run: eval items first, then the shot pool,
/// then the pretraining pool, all disjoint.
struct TaskSplits {
  std::string task;
  std::vector<ClassificationItem> eval;
  std::vector<ClassificationItem> pool;
  std::vector<ClassificationItem> pretrain;
};
TaskSplits make_task_splits(const RunConfig& config, const std::string& task);

/// Held-out language-modelling text for each configured corpus.
std::vector<std::string> heldout_corpora(const RunConfig& config);

/// Pretrains a freshly built model on every configured task, each rendered
/// with its own template.
Model build_and_pretrain(const RunConfig& config, TrainLog* log = nullptr);

/// Calibrated importance scoring, selection and structural removal.
struct PruneOutcome {
  Model model;
  nlohmann::json scores;
  nlohmann::json plan;
  nlohmann::json compression;
};
PruneOutcome prune_model(const Model& model, const RunConfig& config);

/// LoRA recovery on the first `shots` pool items of `task`, merged back into
/// a dense model.
Model recover_on_task(const Model& pruned, const RunConfig& config, const std::string& task, std::size_t shots,
                      TrainLog* log = nullptr);

/// Accuracy of `model` on `task` with the task's own template.
double task_accuracy(const Model& model, const RunConfig& config, const std::string& task);

std::vector<double> corpus_perplexities(const Model& model, const RunConfig& config);

}  // namespace prunelab
