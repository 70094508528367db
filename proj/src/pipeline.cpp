#include "prunelab/pipeline.hpp"

#include <cstdlib>
#include <fstream>
#include <numeric>
#include <set>

#include "prunelab/checkpoint.hpp"
#include "prunelab/datasets.hpp"
#include "prunelab/depgraph.hpp"
#include "prunelab/eval.hpp"
#include "prunelab/lora.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/reports.hpp"
#include "prunelab/tasks.hpp"

namespace prunelab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ContractError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ContractError("unknown config key '" + section + "." + key + "'");
  }
}

template <typename V>
void read(const json& j, const char* key, V& into) {
  if (j.contains(key)) into = j.at(key).get<V>();
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, const std::string& label) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int i = 0; i < 8; ++i) h = (h ^ ((seed >> (8 * i)) & 0xff)) * 1099511628211ULL;
  for (unsigned char c : label) h = (h ^ c) * 1099511628211ULL;
  // splitmix64 finalizer
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

void RunConfig::validate() const {
  model.validate();
  if (eval.tasks.empty()) throw ContractError("eval.tasks must name at least one task");
  std::set<std::string> known;
  for (const auto& t : synthetic_task_names()) known.insert(t);
  for (const auto& t : eval.tasks) {
    if (!known.count(t)) throw ContractError("unknown task '" + t + "'");
  }
  for (const auto& [task, d] : eval.difficulty) {
    if (!known.count(task)) throw ContractError("difficulty given for unknown task '" + task + "'");
    if (d < 1 || d > 3) throw ContractError("difficulty for " + task + " must be 1, 2 or 3");
  }
  if (prune.ratio < 0.0 || prune.ratio >= 1.0) throw ContractError("prune.ratio must lie in [0, 1)");
  recovery.train.validate();
  if (recovery.rank == 0) throw ContractError("recovery.rank must be positive");
  if (recovery.shots == 0 || recovery.shots > eval.train_pool) {
    throw ContractError("recovery.shots must lie in [1, eval.train_pool]");
  }
  for (auto k : eval.sweep_shots) {
    if (k == 0 || k > eval.train_pool) throw ContractError("sweep shot counts must lie in [1, eval.train_pool]");
  }
  if (eval.in_context_shots > eval.train_pool) throw ContractError("in-context shots exceed the train pool");
  if (eval.eval_items == 0) throw ContractError("eval.eval_items must be positive");
  if (calibration.seq_len > model.max_seq_len) throw ContractError("calibration.seq_len exceeds the model window");
  if (eval.ppl_window < 2 || eval.ppl_window > model.max_seq_len) {
    throw ContractError("eval.ppl_window must lie in [2, model.max_seq_len]");
  }
  if (pretrain.batch == 0) throw ContractError("pretrain.batch must be positive");
  if (base_checkpoint && !fs::exists(*base_checkpoint)) {
    throw ContractError("base checkpoint '" + base_checkpoint->string() + "' does not exist");
  }
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = config_to_json(model);
  j["pretrain"] = {{"items_per_task", pretrain.items_per_task}, {"steps", pretrain.steps},
                   {"lr", pretrain.lr},         {"warmup", pretrain.warmup},
                   {"batch", pretrain.batch},   {"context_weight", pretrain.context_weight}};
  j["calibration"] = {
      {"count", calibration.count}, {"seq_len", calibration.seq_len}, {"corpus_items", calibration.corpus_items}};
  j["prune"] = {{"ratio", prune.ratio},
                {"policy", policy_name(prune.policy)},
                {"protected_layers", prune.protected_layers},
                {"method", prune.method == ScoreMethod::taylor ? "taylor" : "magnitude"}};
  json train = {{"lr", recovery.train.lr},
                {"warmup", recovery.train.warmup_steps},
                {"batch", recovery.train.batch_size},
                {"epochs", recovery.train.epochs},
                {"beta1", recovery.train.optimizer.beta1},
                {"beta2", recovery.train.optimizer.beta2},
                {"eps", recovery.train.optimizer.eps},
                {"weight_decay", recovery.train.optimizer.weight_decay}};
  train["max_steps"] = recovery.train.max_steps ? json(*recovery.train.max_steps) : json(nullptr);
  j["recovery"] = {{"train", train},
                   {"shots", recovery.shots},
                   {"rank", recovery.rank},
                   {"context_weight", recovery.context_weight},
                   {"items_per_sequence", recovery.items_per_sequence}};
  j["eval"] = {{"tasks", eval.tasks},
               {"difficulty", eval.difficulty},
               {"train_pool", eval.train_pool},
               {"eval_items", eval.eval_items},
               {"in_context_shots", eval.in_context_shots},
               {"sweep_shots", eval.sweep_shots},
               {"ppl_window", eval.ppl_window},
               {"ppl_items", eval.ppl_items},
               {"corpora", eval.corpora}};
  j["stages"] = {{"pretrain", stages.pretrain}, {"baseline", stages.baseline},
                 {"prune", stages.prune},       {"finetune", stages.finetune},
                 {"eval", stages.eval},         {"prompt_matrix", stages.prompt_matrix},
                 {"sweep", stages.sweep}};
  j["paths"] = {{"out_dir", out_dir.string()}};
  j["paths"]["base_checkpoint"] = base_checkpoint ? json(base_checkpoint->string()) : json(nullptr);
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  check_keys(j, {"seed", "model", "pretrain", "calibration", "prune", "recovery", "eval", "stages", "paths"}, "config");
  read(j, "seed", c.seed);
  if (j.contains("model")) {
    check_keys(j["model"],
               {"vocab_size", "embed_dim", "n_layers", "n_heads", "head_dim", "ffn_dim", "max_seq_len", "rng_seed",
                "rope_base", "norm_eps"},
               "model");
    c.model = config_from_json(j["model"]);
  }
  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    check_keys(p, {"items_per_task", "steps", "lr", "warmup", "batch", "context_weight"}, "pretrain");
    read(p, "items_per_task", c.pretrain.items_per_task);
    read(p, "steps", c.pretrain.steps);
    read(p, "lr", c.pretrain.lr);
    read(p, "warmup", c.pretrain.warmup);
    read(p, "batch", c.pretrain.batch);
    read(p, "context_weight", c.pretrain.context_weight);
  }
  if (j.contains("calibration")) {
    const auto& p = j["calibration"];
    check_keys(p, {"count", "seq_len", "corpus_items"}, "calibration");
    read(p, "count", c.calibration.count);
    read(p, "seq_len", c.calibration.seq_len);
    read(p, "corpus_items", c.calibration.corpus_items);
  }
  if (j.contains("prune")) {
    const auto& p = j["prune"];
    check_keys(p, {"ratio", "policy", "protected_layers", "method"}, "prune");
    read(p, "ratio", c.prune.ratio);
    if (p.contains("policy")) c.prune.policy = policy_from_name(p["policy"].get<std::string>());
    read(p, "protected_layers", c.prune.protected_layers);
    if (p.contains("method")) {
      const auto m = p["method"].get<std::string>();
      if (m == "taylor") c.prune.method = ScoreMethod::taylor;
      else if (m == "magnitude") c.prune.method = ScoreMethod::magnitude;
      else throw ContractError("unknown prune.method '" + m + "'");
    }
  }
  if (j.contains("recovery")) {
    const auto& p = j["recovery"];
    check_keys(p, {"train", "shots", "rank", "context_weight", "items_per_sequence"}, "recovery");
    if (p.contains("train")) {
      const auto& t = p["train"];
      check_keys(t, {"lr", "warmup", "batch", "epochs", "beta1", "beta2", "eps", "weight_decay", "max_steps"},
                 "recovery.train");
      read(t, "lr", c.recovery.train.lr);
      read(t, "warmup", c.recovery.train.warmup_steps);
      read(t, "batch", c.recovery.train.batch_size);
      read(t, "epochs", c.recovery.train.epochs);
      read(t, "beta1", c.recovery.train.optimizer.beta1);
      read(t, "beta2", c.recovery.train.optimizer.beta2);
      read(t, "eps", c.recovery.train.optimizer.eps);
      read(t, "weight_decay", c.recovery.train.optimizer.weight_decay);
      if (t.contains("max_steps") && !t["max_steps"].is_null()) c.recovery.train.max_steps = t["max_steps"].get<std::size_t>();
    }
    read(p, "shots", c.recovery.shots);
    read(p, "rank", c.recovery.rank);
    read(p, "context_weight", c.recovery.context_weight);
    read(p, "items_per_sequence", c.recovery.items_per_sequence);
  }
  if (j.contains("eval")) {
    const auto& p = j["eval"];
    check_keys(p,
               {"tasks", "difficulty", "train_pool", "eval_items", "in_context_shots", "sweep_shots", "ppl_window",
                "ppl_items", "corpora"},
               "eval");
    read(p, "tasks", c.eval.tasks);
    read(p, "difficulty", c.eval.difficulty);
    read(p, "train_pool", c.eval.train_pool);
    read(p, "eval_items", c.eval.eval_items);
    read(p, "in_context_shots", c.eval.in_context_shots);
    read(p, "sweep_shots", c.eval.sweep_shots);
    read(p, "ppl_window", c.eval.ppl_window);
    read(p, "ppl_items", c.eval.ppl_items);
    read(p, "corpora", c.eval.corpora);
  }
  if (j.contains("stages")) {
    const auto& p = j["stages"];
    check_keys(p, {"pretrain", "baseline", "prune", "finetune", "eval", "prompt_matrix", "sweep"}, "stages");
    read(p, "pretrain", c.stages.pretrain);
    read(p, "baseline", c.stages.baseline);
    read(p, "prune", c.stages.prune);
    read(p, "finetune", c.stages.finetune);
    read(p, "eval", c.stages.eval);
    read(p, "prompt_matrix", c.stages.prompt_matrix);
    read(p, "sweep", c.stages.sweep);
  }
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    check_keys(p, {"out_dir", "base_checkpoint"}, "paths");
    if (p.contains("out_dir")) c.out_dir = p["out_dir"].get<std::string>();
    if (p.contains("base_checkpoint") && !p["base_checkpoint"].is_null()) {
      c.base_checkpoint = fs::path(p["base_checkpoint"].get<std::string>());
    }
  }
  return c;
}

void apply_seed_override(RunConfig& config) {
  if (const char* env = std::getenv("PRUNELAB_SEED")) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      config.seed = v;
    } catch (const std::exception&) {
      throw ContractError(std::string("PRUNELAB_SEED is not an unsigned integer: '") + env + "'");
    }
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ContractError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  RunConfig c = from_json(j);
  apply_seed_override(c);
  return c;
}

TaskSplits make_task_splits(const RunConfig& config, const std::string& task) {
  const auto it = config.eval.difficulty.find(task);
  const std::size_t difficulty = it == config.eval.difficulty.end() ? 2 : it->second;
  TaskDataset ds = make_synthetic_task(task, config.eval.train_pool + config.pretrain.items_per_task,
                                       config.eval.eval_items, derive_seed(config.seed, "task:" + task), difficulty);
  TaskSplits s;
  s.task = task;
  s.eval = std::move(ds.eval);
  const auto cut = ds.train.begin() + static_cast<std::ptrdiff_t>(config.eval.train_pool);
  s.pool.assign(ds.train.begin(), cut);
  s.pretrain.assign(cut, ds.train.end());
  return s;
}

std::vector<std::string> heldout_corpora(const RunConfig& config) {
  std::vector<std::string> out;
  for (const auto& name : config.eval.corpora) {
    out.push_back(synthetic_corpus(config.eval.tasks, config.eval.ppl_items, derive_seed(config.seed, "corpus:" + name)));
  }
  return out;
}

Model build_and_pretrain(const RunConfig& config, TrainLog* log) {
  ModelConfig mc = config.model;
  mc.rng_seed = derive_seed(config.seed, "model");
  Model model = build_model<float>(mc);
  std::vector<TrainExample<float>> examples;
  for (const auto& task : config.eval.tasks) {
    const auto splits = make_task_splits(config, task);
    ExampleOptions opt;
    opt.context_weight = config.pretrain.context_weight;
    auto part = render_examples<float>(splits.pretrain, default_template(task), opt);
    examples.insert(examples.end(), part.begin(), part.end());
  }
  TrainLog local;
  if (config.pretrain.steps > 0) {
    if (examples.empty()) throw ContractError("pretraining needs pretrain.items_per_task > 0");
    TrainConfig tc;
    tc.lr = config.pretrain.lr;
    tc.warmup_steps = config.pretrain.warmup;
    tc.batch_size = config.pretrain.batch;
    tc.epochs = (config.pretrain.steps * config.pretrain.batch) / examples.size() + 1;
    tc.max_steps = config.pretrain.steps;
    tc.seed = derive_seed(config.seed, "pretrain");
    local = train_full(model, examples, tc);
  }
  if (log) *log = std::move(local);
  return model;
}

PruneOutcome prune_model(const Model& model, const RunConfig& config) {
  const auto graph = DependencyGraph::build(ModelShape::of(model));
  const auto groups = enumerate_groups(graph);
  std::vector<GroupScore> scores;
  std::string snapshot;
  if (config.prune.method == ScoreMethod::taylor) {
    const std::string corpus = synthetic_corpus(config.eval.tasks, config.calibration.corpus_items,
                                                derive_seed(config.seed, "calibration-corpus"));
    const auto calib = sample_calibration(corpus, config.calibration.count, config.calibration.seq_len,
                                          derive_seed(config.seed, "calibration"));
    const auto store = accumulate_calibration_gradients(model, calib);
    scores = score_groups(groups, graph, model, &store, ScoreMethod::taylor);
    snapshot = "taylor:" + std::to_string(calib.sequences.size()) + "x" + std::to_string(config.calibration.seq_len);
  } else {
    scores = score_groups<float>(groups, graph, model, nullptr, ScoreMethod::magnitude);
    snapshot = "magnitude";
  }
  SelectOptions so;
  so.ratio = config.prune.ratio;
  so.policy = config.prune.policy;
  so.protected_layers = config.prune.protected_layers;
  const auto selected = select_groups(scores, so);
  const auto plan = make_plan(scores, selected, so.ratio, so.policy, snapshot);
  PruneOutcome out{apply_pruning(model, plan), scores_to_json(scores, selected), plan.to_json(), {}};
  out.compression = compression_report(model, out.model).to_json();
  return out;
}

Model recover_on_task(const Model& pruned, const RunConfig& config, const std::string& task, std::size_t shots,
                      TrainLog* log) {
  const auto splits = make_task_splits(config, task);
  if (shots == 0 || shots > splits.pool.size()) throw ContractError("shot count outside the train pool");
  const std::vector<ClassificationItem> items(splits.pool.begin(), splits.pool.begin() + static_cast<std::ptrdiff_t>(shots));
  const std::string tag = task + ":" + std::to_string(shots);
  ExampleOptions eo;
  eo.context_weight = config.recovery.context_weight;
  eo.items_per_sequence = config.recovery.items_per_sequence;
  eo.seed = derive_seed(config.seed, "pack:" + tag);
  const auto examples = render_examples<float>(items, default_template(task), eo);

  AttachOptions ao;
  ao.rank = config.recovery.rank;
  ao.seed = derive_seed(config.seed, "lora:" + tag);
  auto adapted = attach_adapters(pruned, ao);
  TrainConfig tc = config.recovery.train;
  tc.seed = derive_seed(config.seed, "finetune:" + tag);
  TrainLog local = finetune(adapted, examples, tc);
  if (log) *log = std::move(local);
  return merge_adapters(adapted);
}

double task_accuracy(const Model& model, const RunConfig& config, const std::string& task) {
  const auto splits = make_task_splits(config, task);
  TaskDataset ds{task, splits.pool, splits.eval, {}};
  return evaluate_accuracy(model, ds, default_template(task), config.eval.in_context_shots,
                           derive_seed(config.seed, "eval:" + task));
}

std::vector<double> corpus_perplexities(const Model& model, const RunConfig& config) {
  std::vector<double> out;
  for (const auto& text : heldout_corpora(config)) out.push_back(evaluate_perplexity(model, text, config.eval.ppl_window));
  return out;
}

namespace {

/// Collects one stage's outputs as `.partial` files and renames them on commit.
class StageFiles {
 public:
  StageFiles(const fs::path& dir, RunResult& result) : dir_(dir), result_(result) {}

  fs::path put(const std::string& name) {
    const fs::path final_path = dir_ / name;
    fs::path partial = final_path;
    partial += ".partial";
    pending_.emplace_back(partial, final_path);
    return partial;
  }

  void write_text(const std::string& name, const std::string& text) {
    const auto path = put(name);
    std::ofstream os(path, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write '" + path.string() + "'");
  }

  void write_json(const std::string& name, const json& j) { write_text(name, j.dump(2) + "\n"); }

  void commit() {
    for (const auto& [partial, final_path] : pending_) {
      fs::rename(partial, final_path);
      result_.artifacts.push_back(final_path);
    }
    pending_.clear();
  }

 private:
  fs::path dir_;
  RunResult& result_;
  std::vector<std::pair<fs::path, fs::path>> pending_;
};

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("missing artifact '" + path.string() + "'");
  return json::parse(is);
}

template <typename F>
void stage(const char* name, bool enabled, RunResult& result, const F& body) {
  if (!enabled) return;
  try {
    body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
  result.stages_run.push_back(name);
}

template <typename F>
auto need(const char* stage_name, const F& load) {
  try {
    return load();
  } catch (const std::exception& e) {
    throw StageError(stage_name, std::string("input from a skipped stage is unavailable: ") + e.what());
  }
}

}  // namespace

RunResult run_pipeline(const RunConfig& config) {
  try {
    config.validate();
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  RunResult result;
  const fs::path dir = config.out_dir;
  fs::create_directories(dir);
  const auto& tasks = config.eval.tasks;
  std::optional<Model> base, pruned;
  std::map<std::string, Model> tuned;
  std::optional<EvalReport> baseline;

  auto eval_report = [&](const std::string& label, const std::function<const Model&(const std::string&)>& model_for) {
    EvalReport r;
    r.label = label;
    r.corpora = config.eval.corpora;
    r.tasks = tasks;
    std::vector<std::vector<double>> ppl;
    for (const auto& t : tasks) {
      r.accuracy.push_back(task_accuracy(model_for(t), config, t));
      ppl.push_back(corpus_perplexities(model_for(t), config));
    }
    for (std::size_t c = 0; c < r.corpora.size(); ++c) {
      double sum = 0.0;
      for (const auto& p : ppl) sum += p[c];
      r.perplexity.push_back(sum / static_cast<double>(ppl.size()));
    }
    return r;
  };

  stage("pretrain", config.stages.pretrain, result, [&] {
    StageFiles files(dir, result);
    TrainLog log;
    if (config.base_checkpoint) {
      base = load_checkpoint<float>(*config.base_checkpoint);
    } else {
      base = build_and_pretrain(config, &log);
    }
    save_checkpoint(*base, files.put("base.ckpt"));
    files.write_json("pretrain_log.json", log.to_json());
    files.write_json("config.json", config.to_json());
    files.commit();
  });
  auto get_base = [&]() -> const Model& {
    if (!base) base = need("pretrain", [&] { return load_checkpoint<float>(dir / "base.ckpt"); });
    return *base;
  };

  stage("baseline", config.stages.baseline, result, [&] {
    StageFiles files(dir, result);
    const Model& m = get_base();
    baseline = eval_report("baseline", [&](const std::string&) -> const Model& { return m; });
    baseline->finalize();
    files.write_json("baseline_eval.json", baseline->to_json());
    files.commit();
  });

  stage("prune", config.stages.prune, result, [&] {
    StageFiles files(dir, result);
    auto outcome = prune_model(get_base(), config);
    pruned = std::move(outcome.model);
    save_checkpoint(*pruned, files.put("pruned.ckpt"));
    files.write_json("compression.json", {{"compression", outcome.compression}, {"plan", outcome.plan}});
    files.write_json("scores.json", outcome.scores);
    files.commit();
  });
  auto get_pruned = [&]() -> const Model& {
    if (!pruned) pruned = need("prune", [&] { return load_checkpoint<float>(dir / "pruned.ckpt"); });
    return *pruned;
  };

  stage("finetune", config.stages.finetune, result, [&] {
    StageFiles files(dir, result);
    for (const auto& t : tasks) {
      TrainLog log;
      auto m = recover_on_task(get_pruned(), config, t, config.recovery.shots, &log);
      save_checkpoint(m, files.put("tuned_" + t + ".ckpt"));
      files.write_json("finetune_" + t + ".json", log.to_json());
      tuned.insert_or_assign(t, std::move(m));
    }
    files.commit();
  });
  auto get_tuned = [&](const std::string& t) -> const Model& {
    auto it = tuned.find(t);
    if (it == tuned.end()) {
      it = tuned.emplace(t, need("finetune", [&] { return load_checkpoint<float>(dir / ("tuned_" + t + ".ckpt")); }))
               .first;
    }
    return it->second;
  };

  stage("eval", config.stages.eval, result, [&] {
    StageFiles files(dir, result);
    if (!baseline) {
      baseline = need("baseline", [&] { return EvalReport::from_json(read_json(dir / "baseline_eval.json")); });
    }
    const Model& p = get_pruned();
    RecoveryTable table;
    table.baseline = *baseline;
    auto untuned = eval_report("pruned, no tuning", [&](const std::string&) -> const Model& { return p; });
    untuned.finalize(&*baseline);
    auto recovered = eval_report("pruned + task LoRA", get_tuned);
    recovered.finalize(&*baseline);
    const std::string ratio = format_fixed(100.0 * config.prune.ratio, 0) + "%";
    table.rows = {{ratio, untuned}, {ratio, recovered}};
    files.write_json("eval.json", table.to_json());
    files.write_text("eval.txt", table.render());
    files.commit();
  });

  stage("prompt_matrix", config.stages.prompt_matrix, result, [&] {
    StageFiles files(dir, result);
    std::vector<PromptTemplate> templates;
    std::vector<TaskDataset> datasets;
    for (const auto& t : tasks) {
      templates.push_back(default_template(t));
      const auto s = make_task_splits(config, t);
      datasets.push_back(TaskDataset{t, s.pool, s.eval, {}});
    }
    const auto matrix = prompt_task_matrix([&](std::size_t row) { return make_scorer(get_tuned(tasks[row])); },
                                           templates, datasets, config.eval.in_context_shots,
                                           derive_seed(config.seed, "prompt-matrix"));
    files.write_json("prompt_matrix.json", matrix.to_json());
    files.write_text("prompt_matrix.txt", render_prompt_matrix(matrix));
    files.commit();
  });

  stage("sweep", config.stages.sweep, result, [&] {
    StageFiles files(dir, result);
    const Model& p = get_pruned();
    const auto sweep = shots_sweep(
        [&](std::size_t k) {
          SweepRow row;
          std::vector<std::vector<double>> ppl;
          for (const auto& t : tasks) {
            const Model m = recover_on_task(p, config, t, k);
            row.accuracy.push_back(task_accuracy(m, config, t));
            ppl.push_back(corpus_perplexities(m, config));
          }
          for (std::size_t c = 0; c < config.eval.corpora.size(); ++c) {
            double sum = 0.0;
            for (const auto& v : ppl) sum += v[c];
            row.perplexity.push_back(sum / static_cast<double>(ppl.size()));
          }
          return row;
        },
        config.eval.sweep_shots, config.eval.corpora, tasks);
    files.write_json("sweep.json", sweep.to_json());
    files.write_text("sweep.txt", render_sweep(sweep));
    files.commit();
  });

  return result;
}

}  // namespace prunelab
