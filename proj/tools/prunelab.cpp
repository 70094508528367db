#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunelab/checkpoint.hpp"
#include "prunelab/depgraph.hpp"
#include "prunelab/eval.hpp"
#include "prunelab/pipeline.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/reports.hpp"
#include "prunelab/sampling.hpp"
#include "prunelab/tasks.hpp"

using namespace prunelab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommandError : std::runtime_error {
  CommandError(std::string stage_name, const std::string& what) : std::runtime_error(what), stage(std::move(stage_name)) {}
  std::string stage;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path partial = path;
  partial += ".partial";
  {
    std::ofstream os(partial, std::ios::binary);
    os << text;
    if (!os) throw IoError("cannot write '" + path.string() + "'");
  }
  fs::rename(partial, path);
}

void save_model(const Model& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path partial = path;
  partial += ".partial";
  save_checkpoint(model, partial);
  fs::rename(partial, path);
}

fs::path beside(const fs::path& path, const std::string& suffix) {
  fs::path p = path;
  p += suffix;
  return p;
}

/// Options shared by commands that take a run configuration.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<double> ratio;
  std::optional<std::size_t> rank;
  std::optional<std::size_t> shots;
  std::optional<std::size_t> epochs;
  std::optional<std::string> policy;
  std::vector<std::string> tasks;

  void add_config(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Master seed");
  }

  RunConfig load() const {
    RunConfig c = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (config_path.empty()) apply_seed_override(c);
    if (seed) c.seed = *seed;
    if (ratio) c.prune.ratio = *ratio;
    if (rank) c.recovery.rank = *rank;
    if (shots) c.recovery.shots = *shots;
    if (epochs) c.recovery.train.epochs = *epochs;
    if (policy) c.prune.policy = policy_from_name(*policy);
    if (!tasks.empty()) c.eval.tasks = tasks;
    c.validate();
    return c;
  }
};

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw ContractError("not a list of integers: '" + text + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ContractError("empty list: '" + text + "'");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured pruning and low-rank recovery for small decoder models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("prunelab ") + PRUNELAB_VERSION);

  std::string current = "cli";
  std::function<void()> action;
  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* cmd = app.add_subcommand(name, help);
    cmd->set_version_flag("--version", std::string("prunelab ") + PRUNELAB_VERSION);
    return cmd;
  };

  Common common;
  std::string in_path, out_path, scores_out, prompt, skip;
  std::string task;
  std::size_t max_tokens = 32, top_k = 50, in_context = 0;
  double temperature = 1.0;
  std::string shot_list = "10,20,50";
  bool dump = false, reference = false;

  // build
  auto* build = command("build", "Build a model and pretrain it on the synthetic tasks");
  common.add_config(build);
  build->add_option("--out", out_path, "Checkpoint to write")->required();
  build->callback([&] {
    action = [&] {
      current = "build";
      const auto cfg = common.load();
      TrainLog log;
      const Model m = build_and_pretrain(cfg, &log);
      save_model(m, out_path);
      write_file(beside(out_path, ".train.json"), log.to_json().dump(2) + "\n");
      std::cout << "wrote " << out_path << " (" << m.parameter_count() << " parameters)\n";
    };
  });

  // prune
  auto* prune = command("prune", "Score coupled groups and remove the least important");
  common.add_config(prune);
  prune->add_option("--in", in_path, "Input checkpoint")->required()->check(CLI::ExistingFile);
  prune->add_option("--out", out_path, "Pruned checkpoint")->required();
  prune->add_option("--ratio", common.ratio, "Fraction of groups removed per layer and kind");
  prune->add_option("--policy", common.policy, "per-layer or global");
  prune->add_option("--scores-out", scores_out, "Write group scores as JSON");
  prune->callback([&] {
    action = [&] {
      current = "prune";
      const auto cfg = common.load();
      const Model m = load_checkpoint<float>(in_path);
      const auto outcome = prune_model(m, cfg);
      save_model(outcome.model, out_path);
      const json report = {{"compression", outcome.compression}, {"plan", outcome.plan}};
      write_file(beside(out_path, ".report.json"), report.dump(2) + "\n");
      if (!scores_out.empty()) write_file(scores_out, outcome.scores.dump(2) + "\n");
      std::cout << outcome.compression.dump(2) << "\n";
    };
  });

  // finetune
  auto* ft = command("finetune", "LoRA recovery on K solved examples of one task, merged into the weights");
  common.add_config(ft);
  ft->add_option("--in", in_path, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", out_path, "Tuned checkpoint")->required();
  ft->add_option("--task", task, "Task name")->required();
  ft->add_option("--shots", common.shots, "Number of fine-tuning examples K");
  ft->add_option("--rank", common.rank, "Adapter rank");
  ft->add_option("--epochs", common.epochs, "Training epochs");
  ft->callback([&] {
    action = [&] {
      current = "finetune";
      auto cfg = common.load();
      const Model m = load_checkpoint<float>(in_path);
      TrainLog log;
      const Model tuned = recover_on_task(m, cfg, task, cfg.recovery.shots, &log);
      save_model(tuned, out_path);
      write_file(beside(out_path, ".train.json"), log.to_json().dump(2) + "\n");
      std::cout << "wrote " << out_path << " after " << log.steps.size() << " steps\n";
    };
  });

  // eval
  auto* ev = command("eval", "Accuracy per task and held-out perplexity");
  common.add_config(ev);
  ev->add_option("--in", in_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--task", common.tasks, "Tasks to evaluate (repeatable)");
  ev->add_option("--shots", in_context, "Solved examples in each prompt");
  ev->add_option("--out", out_path, "Write the report as JSON");
  ev->callback([&] {
    action = [&] {
      current = "eval";
      auto cfg = common.load();
      cfg.eval.in_context_shots = in_context;
      const Model m = load_checkpoint<float>(in_path);
      EvalReport r;
      r.label = fs::path(in_path).filename().string();
      r.tasks = cfg.eval.tasks;
      r.corpora = cfg.eval.corpora;
      for (const auto& t : r.tasks) r.accuracy.push_back(task_accuracy(m, cfg, t));
      r.perplexity = corpus_perplexities(m, cfg);
      r.finalize();
      if (!out_path.empty()) write_file(out_path, r.to_json().dump(2) + "\n");
      RecoveryTable table;
      table.baseline = r;
      std::cout << table.render();
    };
  });

  // prompt-matrix
  auto* pm = command("prompt-matrix", "Tune one model per task template and score every template on every task");
  common.add_config(pm);
  pm->add_option("--in", in_path, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
  pm->add_option("--task", common.tasks, "Tasks (repeatable)");
  pm->add_option("--shots", common.shots, "Fine-tuning examples per task");
  pm->add_option("--rank", common.rank, "Adapter rank");
  pm->add_option("--epochs", common.epochs, "Training epochs");
  pm->add_option("--out", out_path, "Write the matrix as JSON");
  pm->callback([&] {
    action = [&] {
      current = "prompt-matrix";
      const auto cfg = common.load();
      const Model m = load_checkpoint<float>(in_path);
      std::vector<Model> tuned;
      std::vector<PromptTemplate> templates;
      std::vector<TaskDataset> datasets;
      for (const auto& t : cfg.eval.tasks) {
        tuned.push_back(recover_on_task(m, cfg, t, cfg.recovery.shots));
        templates.push_back(default_template(t));
        const auto s = make_task_splits(cfg, t);
        datasets.push_back(TaskDataset{t, s.pool, s.eval, {}});
      }
      const auto matrix = prompt_task_matrix([&](std::size_t row) { return make_scorer(tuned[row]); }, templates,
                                             datasets, cfg.eval.in_context_shots,
                                             derive_seed(cfg.seed, "prompt-matrix"));
      if (!out_path.empty()) write_file(out_path, matrix.to_json().dump(2) + "\n");
      std::cout << render_prompt_matrix(matrix);
    };
  });

  // sweep-shots
  auto* sw = command("sweep-shots", "Fine-tune fresh adapters for each K and report accuracy and perplexity");
  common.add_config(sw);
  sw->add_option("--in", in_path, "Pruned checkpoint")->required()->check(CLI::ExistingFile);
  sw->add_option("--task", common.tasks, "Tasks (repeatable)");
  sw->add_option("--shots", shot_list, "Comma-separated K values");
  sw->add_option("--rank", common.rank, "Adapter rank");
  sw->add_option("--epochs", common.epochs, "Training epochs");
  sw->add_option("--out", out_path, "Write the sweep as JSON");
  sw->callback([&] {
    action = [&] {
      current = "sweep-shots";
      auto cfg = common.load();
      cfg.eval.sweep_shots = parse_list(shot_list);
      cfg.validate();
      const Model m = load_checkpoint<float>(in_path);
      const auto sweep = shots_sweep(
          [&](std::size_t k) {
            SweepRow row;
            std::vector<double> ppl(cfg.eval.corpora.size(), 0.0);
            for (const auto& t : cfg.eval.tasks) {
              const Model tuned = recover_on_task(m, cfg, t, k);
              row.accuracy.push_back(task_accuracy(tuned, cfg, t));
              const auto p = corpus_perplexities(tuned, cfg);
              for (std::size_t c = 0; c < p.size(); ++c) ppl[c] += p[c] / static_cast<double>(cfg.eval.tasks.size());
            }
            row.perplexity = ppl;
            return row;
          },
          cfg.eval.sweep_shots, cfg.eval.corpora, cfg.eval.tasks);
      if (!out_path.empty()) write_file(out_path, sweep.to_json().dump(2) + "\n");
      std::cout << render_sweep(sweep);
    };
  });

  // generate
  auto* gen = command("generate", "Sample a continuation");
  gen->add_option("--in", in_path, "Checkpoint")->required()->check(CLI::ExistingFile);
  gen->add_option("--prompt", prompt, "Prompt text");
  gen->add_option("--max-tokens", max_tokens, "Tokens to generate");
  gen->add_option("--temperature", temperature, "Softmax temperature; 0 decodes greedily");
  gen->add_option("--top-k", top_k, "Sample among the k most likely tokens");
  std::uint64_t gen_seed = 0;
  gen->add_option("--seed", gen_seed, "Sampling seed");
  gen->callback([&] {
    action = [&] {
      current = "generate";
      const Model m = load_checkpoint<float>(in_path);
      SamplingOptions so;
      so.max_new_tokens = max_tokens;
      so.temperature = temperature;
      so.top_k = top_k;
      so.seed = gen_seed;
      std::cout << generate(m, prompt, so) << "\n";
    };
  });

  // graph
  auto* gr = command("graph", "Dependency graph and coupled groups of a model");
  common.add_config(gr);
  gr->add_option("--in", in_path, "Checkpoint (default: the configured architecture)")->check(CLI::ExistingFile);
  gr->add_flag("--dump", dump, "Print nodes and edges in addition to the groups");
  gr->add_option("--out", out_path, "Write the JSON to a file");
  gr->callback([&] {
    action = [&] {
      current = "graph";
      ModelShape shape;
      if (!in_path.empty()) {
        shape = ModelShape::of(load_checkpoint<float>(in_path));
      } else {
        const auto cfg = common.load();
        shape.heads_per_layer.assign(cfg.model.n_layers, cfg.model.n_heads);
        shape.ffn_per_layer.assign(cfg.model.n_layers, cfg.model.ffn_dim);
      }
      const auto g = DependencyGraph::build(shape);
      json j = {{"groups", groups_to_json(g, enumerate_groups(g))}};
      if (dump) j["graph"] = g.to_json();
      const std::string text = j.dump(2) + "\n";
      if (!out_path.empty()) write_file(out_path, text);
      else std::cout << text;
    };
  });

  // report
  auto* rep = command("report", "Render run reports, or the published comparison grid");
  rep->add_option("--in", in_path, "Run directory");
  rep->add_flag("--reference", reference, "Recompute recovery rates of the published grid");
  rep->callback([&] {
    action = [&] {
      current = "report";
      if (reference || in_path.empty()) {
        const auto& ref = reference_recovery_table();
        std::vector<std::string> header{"Ratio", "Method", "Mean", "Recovery (printed)", "Recovery (recomputed)"};
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : ref.rows) {
          const double mean[] = {r.mean};
          const double base[] = {ref.baseline_mean};
          rows.push_back({r.ratio, r.method, format_fixed(r.mean), format_fixed(r.recovery),
                          format_fixed(recovery_rate(mean, base))});
        }
        std::cout << render_table(header, rows);
        return;
      }
      const fs::path dir = in_path;
      auto load = [&](const char* name) {
        std::ifstream is(dir / name);
        if (!is) throw IoError("missing report '" + (dir / name).string() + "'");
        return json::parse(is);
      };
      for (const char* name : {"eval.txt", "prompt_matrix.txt", "sweep.txt"}) {
        std::ifstream is(dir / name);
        if (!is) continue;
        std::cout << "== " << name << "\n" << is.rdbuf() << "\n";
      }
      if (fs::exists(dir / "compression.json")) std::cout << "== compression\n" << load("compression.json")["compression"].dump(2) << "\n";
    };
  });

  // run
  auto* run = command("run", "Execute the whole pipeline from a configuration file");
  common.add_config(run);
  std::string out_dir;
  run->add_option("--out-dir", out_dir, "Artifact directory (overrides paths.out_dir)");
  run->add_option("--ratio", common.ratio, "Pruning ratio");
  run->add_option("--rank", common.rank, "Adapter rank");
  run->add_option("--shots", common.shots, "Fine-tuning examples per task");
  run->add_option("--epochs", common.epochs, "Training epochs");
  run->add_option("--policy", common.policy, "per-layer or global");
  run->add_option("--skip", skip, "Comma-separated stages to skip");
  run->callback([&] {
    action = [&] {
      current = "run";
      auto cfg = common.load();
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      std::stringstream ss(skip);
      std::string s;
      while (std::getline(ss, s, ',')) {
        if (s.empty()) continue;
        if (s == "pretrain") cfg.stages.pretrain = false;
        else if (s == "baseline") cfg.stages.baseline = false;
        else if (s == "prune") cfg.stages.prune = false;
        else if (s == "finetune") cfg.stages.finetune = false;
        else if (s == "eval") cfg.stages.eval = false;
        else if (s == "prompt_matrix" || s == "prompt-matrix") cfg.stages.prompt_matrix = false;
        else if (s == "sweep") cfg.stages.sweep = false;
        else throw ContractError("unknown stage '" + s + "'");
      }
      const auto result = run_pipeline(cfg);
      for (const auto& a : result.artifacts) std::cout << a.string() << "\n";
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", e.what()}, {"stage", "cli"}}.dump() << "\n";
    return 2;
  }
  try {
    if (action) action();
  } catch (const StageError& e) {
    std::cerr << json{{"error", e.cause()}, {"stage", e.stage()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"stage", current}}.dump() << "\n";
    return 1;
  }
  return 0;
}
