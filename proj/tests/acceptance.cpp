// Acceptance checks, one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "helpers.hpp"
#include "prunelab/datasets.hpp"
#include "prunelab/depgraph.hpp"
#include "prunelab/eval.hpp"
#include "prunelab/lora.hpp"
#include "prunelab/pipeline.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/reports.hpp"
#include "prunelab/tokenizer.hpp"

using namespace prunelab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::vector<std::vector<std::size_t>> fixed_inputs() {
  Tokenizer tok;
  std::vector<std::vector<std::size_t>> out;
  for (int i = 0; i < 10; ++i) out.push_back(tok.encode("probe " + std::to_string(i * 71) + " xyz"));
  return out;
}

template <typename T>
double worst_gap(const std::function<Tensor<T>(std::span<const std::size_t>)>& a,
                 const std::function<Tensor<T>(std::span<const std::size_t>)>& b) {
  double worst = 0.0;
  for (const auto& in : fixed_inputs()) {
    const std::span<const std::size_t> s(in);
    worst = std::max(worst, max_abs_diff(a(s), b(s)));
  }
  return worst;
}

// Gradient of the next-token loss against central differences on every parameter.
Verdict gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  std::mt19937_64 rng(101);
  for (int inst = 0; inst < 20; ++inst) {
    auto cfg = testing::tiny_config(1000 + inst);
    cfg.n_layers = 1 + inst % 2;
    auto model = build_model<double>(cfg);
    std::vector<std::size_t> tokens(6);
    for (auto& t : tokens) t = rng() % cfg.vocab_size;
    ForwardOptions<double> opts;
    opts.trainable_base = true;
    Tape<double> tape;
    const auto analytic = tape.grad(next_token_loss(tape, model, std::span<const std::size_t>(tokens), opts));
    const auto fd = finite_diff_gradient(
        [&](const TensorMap<double>& p) {
          auto m = model;
          m.set_parameters(p);
          Tape<double> t(false);
          return t.value(next_token_loss(t, m, std::span<const std::size_t>(tokens))).item();
        },
        model.parameters(), 1e-5);
    for (const auto& [name, g] : fd) {
      const double e = relative_error(analytic.at(name), g);
      if (e > worst) {
        worst = e;
        where = "instance " + std::to_string(inst) + " " + name;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 60.0,
          "worst relative error " + sci(worst) + " at " + where + ", " + fmt(secs, 1) + " s"};
}

ModelShape uniform_shape(std::size_t layers, std::size_t heads, std::size_t ffn) {
  return {std::vector<std::size_t>(layers, heads), std::vector<std::size_t>(layers, ffn)};
}

// Closure over edges written out from the coupling rules, independent of the graph's own edge list.
std::set<std::vector<NodeId>> rule_closure(const DependencyGraph& g, const ModelShape& shape) {
  std::vector<NodeId> parent(g.nodes().size());
  std::iota(parent.begin(), parent.end(), 0);
  auto root = [&](NodeId n) {
    while (parent[n] != n) n = parent[n] = parent[parent[n]];
    return n;
  };
  auto join = [&](NodeId a, NodeId b) { parent[std::max(root(a), root(b))] = std::min(root(a), root(b)); };
  for (std::size_t l = 0; l < shape.heads_per_layer.size(); ++l) {
    for (std::size_t h = 0; h < shape.heads_per_layer[l]; ++h)
      for (auto r : {ProjRole::q_proj, ProjRole::k_proj, ProjRole::v_proj})
        join(g.find(l, r, h), g.find(l, ProjRole::o_proj, h));
    for (std::size_t c = 0; c < shape.ffn_per_layer[l]; ++c)
      for (auto r : {ProjRole::gate_proj, ProjRole::up_proj}) join(g.find(l, r, c), g.find(l, ProjRole::down_proj, c));
  }
  std::map<NodeId, std::vector<NodeId>> comps;
  for (NodeId n = 0; n < g.nodes().size(); ++n) comps[root(n)].push_back(n);
  std::set<std::vector<NodeId>> out;
  for (auto& [r, members] : comps) out.insert(members);
  return out;
}

Verdict group_oracle() {
  std::size_t configs = 0, mismatches = 0, trigger_failures = 0;
  for (std::size_t layers = 1; layers <= 3; ++layers)
    for (std::size_t heads = 2; heads <= 4; ++heads)
      for (std::size_t ffn = 4; ffn <= 8; ++ffn) {
        ++configs;
        const auto shape = uniform_shape(layers, heads, ffn);
        const auto g = DependencyGraph::build(shape);
        const auto groups = enumerate_groups(g);
        std::set<std::vector<NodeId>> found;
        for (const auto& grp : groups) {
          found.insert(grp.members);
          for (NodeId m : grp.members)
            if (propagate_from_trigger(g, m).members != grp.members) ++trigger_failures;
        }
        if (found != rule_closure(g, shape) || found.size() != groups.size()) ++mismatches;
      }
  return {mismatches == 0 && trigger_failures == 0, std::to_string(configs) + " configs, " +
                                                         std::to_string(mismatches) + " set mismatches, " +
                                                         std::to_string(trigger_failures) + " trigger failures"};
}

void zero_group(Model& m, const PruningGroup& grp) {
  auto& L = m.layers[grp.layer];
  if (grp.kind == GroupKind::attention_head) {
    const std::size_t hd = m.config.head_dim;
    for (auto* w : {&L.q_proj, &L.k_proj, &L.v_proj})
      for (std::size_t r = grp.unit * hd; r < (grp.unit + 1) * hd; ++r)
        for (std::size_t c = 0; c < w->cols(); ++c) w->at(r, c) = 0.0f;
    for (std::size_t r = 0; r < L.o_proj.rows(); ++r)
      for (std::size_t c = grp.unit * hd; c < (grp.unit + 1) * hd; ++c) L.o_proj.at(r, c) = 0.0f;
  } else {
    for (auto* w : {&L.gate_proj, &L.up_proj})
      for (std::size_t c = 0; c < w->cols(); ++c) w->at(grp.unit, c) = 0.0f;
    for (std::size_t r = 0; r < L.down_proj.rows(); ++r) L.down_proj.at(r, grp.unit) = 0.0f;
  }
}

Verdict zero_contribution() {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (int pair = 0; pair < 50; ++pair) {
    auto cfg = testing::tiny_config(2000 + pair);
    cfg.n_layers = 1 + rng() % 3;
    cfg.n_heads = 2 + rng() % 3;
    cfg.head_dim = 4;
    cfg.embed_dim = cfg.n_heads * cfg.head_dim;
    cfg.ffn_dim = 4 + rng() % 5;
    auto model = build_model<float>(cfg);
    const auto groups = enumerate_groups(DependencyGraph::build(ModelShape::of(model)));
    const auto& grp = groups[rng() % groups.size()];
    zero_group(model, grp);
    PruningPlan plan;
    plan.entries = {{grp.layer, grp.kind, {grp.unit}}};
    const auto pruned = apply_pruning(model, plan);
    worst = std::max(worst, worst_gap<float>([&](auto s) { return compute_logits(model, s); },
                                             [&](auto s) { return compute_logits(pruned, s); }));
  }
  return {worst <= 1e-6, "50 pairs, worst logit change " + sci(worst)};
}

Verdict lora_identity_and_merge() {
  auto model = build_model<float>(testing::toy_config(404));
  AttachOptions ao;
  ao.seed = 5;
  auto adapted = attach_adapters(model, ao);
  const double identity = worst_gap<float>([&](auto s) { return adapted.logits(s); },
                                           [&](auto s) { return compute_logits(model, s); });
  auto task = make_synthetic_task("pattern", 40, 1, 6);
  const auto examples = render_examples<float>(task.train, default_template("pattern"), {});
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.warmup_steps = 20;
  tc.batch_size = 1;
  tc.epochs = 10;
  tc.max_steps = 200;
  tc.seed = 7;
  const auto log = finetune(adapted, examples, tc);
  auto copy = adapted;
  const auto merged = merge_adapters(copy);
  const double merge = worst_gap<float>([&](auto s) { return adapted.logits(s); },
                                        [&](auto s) { return compute_logits(merged, s); });
  return {identity <= 1e-6 && merge <= 1e-5 && log.steps.size() == 200,
          "attach gap " + sci(identity) + ", merge gap after " + std::to_string(log.steps.size()) +
              " steps " + sci(merge)};
}

Verdict report_arithmetic() {
  const auto& ref = reference_recovery_table();
  std::size_t bad = 0;
  std::string misses;
  for (const auto& row : ref.rows) {
    const std::vector<double> mean{row.mean}, base{ref.baseline_mean};
    const double r = recovery_rate(std::span<const double>(mean), std::span<const double>(base));
    if (std::abs(r - row.recovery) > 0.01 + 1e-9) {
      ++bad;
      misses += " " + row.ratio + " " + row.method + " printed " + fmt(row.recovery, 2) + " recomputed " + fmt(r, 2) + ";";
    }
  }
  auto task_prompted = [&](const std::string& ratio) {
    for (const auto& row : ref.rows)
      if (row.ratio == ratio && row.method == "task-prompted LoRA") return row.recovery;
    return 0.0;
  };
  const bool anchors = task_prompted("20%") == 95.68 && task_prompted("50%") == 86.54;
  return {bad == 0 && anchors && ref.baseline_mean == 68.59,
          std::to_string(ref.rows.size() - bad) + "/" + std::to_string(ref.rows.size()) + " rows within 0.01" +
              (misses.empty() ? "" : ";" + misses)};
}

RunConfig fixture_config(const std::string& name) { return RunConfig::load(fs::path(PRUNELAB_CONFIG_DIR) / name); }

Verdict recovery_experiment() {
  const auto t0 = Clock::now();
  const auto cfg = fixture_config("recovery_experiment.json");
  const std::string task = cfg.eval.tasks.front();
  const auto base = build_and_pretrain(cfg);
  const double acc_base = task_accuracy(base, cfg, task);
  const auto outcome = prune_model(base, cfg);
  const double acc_pruned = task_accuracy(outcome.model, cfg, task);
  const auto tuned = recover_on_task(outcome.model, cfg, task, cfg.recovery.shots);
  const double acc_tuned = task_accuracy(tuned, cfg, task);
  const double secs = seconds_since(t0);
  const bool pass = acc_base >= 0.9 && acc_base - acc_pruned >= 0.05 && acc_tuned >= 0.8 * acc_base &&
                    acc_tuned > acc_pruned && secs < 600.0;
  return {pass, "base " + fmt(acc_base, 3) + ", pruned " + fmt(acc_pruned, 3) + ", tuned " + fmt(acc_tuned, 3) +
                    ", params " + std::to_string(base.parameter_count()) + " -> " +
                    std::to_string(outcome.model.parameter_count()) + ", " + fmt(secs, 1) + " s"};
}

Verdict prompt_selection(const fs::path& work) {
  auto cfg = fixture_config("four_tasks.json");
  cfg.out_dir = work / "four_tasks";
  cfg.stages.sweep = false;
  run_pipeline(cfg);
  std::ifstream is(cfg.out_dir / "prompt_matrix.json");
  const auto j = json::parse(is);
  const auto acc = j.at("accuracy").get<std::vector<std::vector<double>>>();
  const std::size_t n = acc.size();
  std::size_t wins = 0;
  std::string cells;
  for (std::size_t t = 0; t < n; ++t) {
    double mismatched = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      if (r != t) mismatched += acc[r][t];
    mismatched /= static_cast<double>(n - 1);
    if (acc[t][t] >= mismatched) ++wins;
    cells += " " + cfg.eval.tasks[t] + " " + fmt(acc[t][t], 3) + " vs " + fmt(mismatched, 3) + ";";
  }
  return {n == 4 && wins >= 3, std::to_string(wins) + "/4 tasks matched >= mismatched mean;" + cells};
}

Verdict perplexity_sanity() {
  auto uniform = build_model<float>(testing::tiny_config(1));
  uniform.lm_head.fill(0.0f);
  const double ppl_uniform =
      evaluate_perplexity(uniform, "a quick brown fox jumps over the lazy dog near the river bank", 16);
  const double rel = std::abs(ppl_uniform / 259.0 - 1.0);

  std::string corpus;
  for (int i = 0; i < 40; ++i) corpus += "abcd";
  Tokenizer tok;
  const auto tokens = tok.encode(corpus);
  std::vector<TrainExample<float>> examples;
  for (std::size_t s = 0; s + 16 <= tokens.size(); s += 16) {
    std::vector<std::size_t> w(tokens.begin() + s, tokens.begin() + s + 16);
    examples.push_back({w, std::vector<float>(w.size() - 1, 1.0f)});
  }
  auto cfg = testing::tiny_config(3);
  cfg.embed_dim = 16;
  cfg.head_dim = 8;
  cfg.ffn_dim = 32;
  auto model = build_model<float>(cfg);
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.warmup_steps = 10;
  tc.batch_size = 4;
  tc.epochs = 1000;
  tc.max_steps = 300;
  tc.seed = 1;
  train_full(model, examples, tc);
  const double ppl_fit = evaluate_perplexity(model, corpus, 16);
  return {rel <= 1e-6 && ppl_fit <= 1.05,
          "uniform " + fmt(ppl_uniform, 6) + " (relative error " + sci(rel) + "), overfit " + fmt(ppl_fit)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Verdict determinism(const fs::path& work) {
  const fs::path cfg_path = work / "determinism.json";
  json cfg = {{"seed", 11},
              {"model", {{"embed_dim", 16}, {"n_heads", 2}, {"head_dim", 8}, {"ffn_dim", 16}, {"max_seq_len", 192}}},
              {"pretrain", {{"items_per_task", 60}, {"steps", 20}}},
              {"calibration", {{"count", 4}, {"seq_len", 48}, {"corpus_items", 20}}},
              {"recovery", {{"shots", 8}, {"train", {{"max_steps", 6}}}}},
              {"eval", {{"train_pool", 20}, {"eval_items", 10}, {"sweep_shots", {2, 4}}, {"ppl_items", 4}, {"ppl_window", 64}}}};
  std::ofstream(cfg_path) << cfg.dump(2);
  const fs::path out = work / "det_run", first = work / "det_first";
  std::vector<fs::path> dirs{first, out};
  fs::remove_all(first);
  for (int i = 0; i < 2; ++i) {
    fs::remove_all(out);
    const std::string cmd = std::string(PRUNELAB_CLI) + " run --config " + cfg_path.string() + " --out-dir " +
                            out.string() + " > /dev/null";
    if (std::system(cmd.c_str()) != 0) return {false, "run failed: " + cmd};
    if (i == 0) fs::rename(out, first);
  }
  std::size_t reports = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(dirs[0])) {
    if (e.path().extension() != ".json") continue;
    ++reports;
    if (slurp(e.path()) != slurp(dirs[1] / e.path().filename())) ++differing;
  }
  return {reports > 0 && differing == 0,
          std::to_string(reports) + " JSON reports compared, " + std::to_string(differing) + " differ"};
}

Verdict shot_sweep(const fs::path& work) {
  auto cfg = fixture_config("recovery_experiment.json");
  cfg.out_dir = work / "shot_sweep";
  cfg.stages.prompt_matrix = false;
  run_pipeline(cfg);
  std::ifstream is(cfg.out_dir / "sweep.json");
  const auto j = json::parse(is);
  const auto& rows = j.at("rows");
  std::map<std::size_t, double> avg;
  bool shaped = rows.size() == 3;
  for (const auto& r : rows) {
    avg[r.at("shots").get<std::size_t>()] = r.at("average").get<double>();
    shaped = shaped && r.at("accuracy").size() == cfg.eval.tasks.size() &&
             r.at("perplexity").size() == cfg.eval.corpora.size();
  }
  shaped = shaped && avg.count(10) && avg.count(20) && avg.count(50);
  const bool pass = shaped && avg[50] >= avg[10];
  return {pass, shaped ? "mean accuracy K=10 " + fmt(avg[10], 3) + ", K=20 " + fmt(avg[20], 3) + ", K=50 " +
                             fmt(avg[50], 3)
                       : std::string("malformed sweep report")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunelab acceptance checks"};
  std::vector<int> only;
  std::string work_dir;
  app.add_option("--only", only, "Criteria to run (default: all)");
  app.add_option("--work-dir", work_dir, "Scratch directory for pipeline runs");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_dir.empty()
                            ? fs::temp_directory_path() / ("prunelab_acceptance_" + std::to_string(::getpid()))
                            : fs::path(work_dir);
  fs::create_directories(work);

  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, gradient_check},
      {2, group_oracle},
      {3, zero_contribution},
      {4, lora_identity_and_merge},
      {5, report_arithmetic},
      {6, recovery_experiment},
      {7, [&] { return prompt_selection(work); }},
      {8, perplexity_sanity},
      {9, [&] { return determinism(work); }},
      {10, [&] { return shot_sweep(work); }},
  };
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << "criterion " << id << ": " << (v.pass ? "PASS" : "FAIL") << " (" << v.detail << ")" << std::endl;
  }
  if (work_dir.empty()) fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
