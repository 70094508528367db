#include "prunelab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "prunelab/tokenizer.hpp"

namespace prunelab {

OptionScores predict_from_scores(std::vector<double> scores) {
  if (scores.empty()) throw ContractError("no options to score");
  OptionScores out;
  out.predicted = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[out.predicted]) out.predicted = i;
  out.scores = std::move(scores);
  return out;
}

namespace {

/// log softmax(row)[target], in double.
template <typename T>
double log_prob(std::span<const T> row, std::size_t target) {
  double mx = -INFINITY;
  for (auto v : row) mx = std::max(mx, static_cast<double>(v));
  double z = 0.0;
  for (auto v : row) z += std::exp(static_cast<double>(v) - mx);
  return static_cast<double>(row[target]) - mx - std::log(z);
}

}  // namespace

template <typename T>
OptionScores score_classification(const TransformerModel<T>& model, std::string_view query,
                                  std::span<const std::string> options, const ProjectionHook<T>* hook) {
  if (options.empty()) throw ContractError("score_classification needs at least one option");
  const Tokenizer tok;
  std::vector<std::size_t> context{Tokenizer::kBos};
  const auto q = tok.encode(query);
  context.insert(context.end(), q.begin(), q.end());

  std::vector<double> scores;
  for (const auto& option : options) {
    const auto opt = tok.encode(option);
    if (opt.empty()) throw ContractError("option '" + option + "' tokenizes to zero tokens");
    if (opt.size() >= model.config.max_seq_len) throw ContractError("option longer than the model window");
    std::vector<std::size_t> full = context;
    full.insert(full.end(), opt.begin(), opt.end());
    // Forward all but the last token; keep the window ending there.
    std::size_t end = full.size() - 1;
    std::size_t begin = end > model.config.max_seq_len ? end - model.config.max_seq_len : 0;
    const auto input = std::span<const std::size_t>(full).subspan(begin, end - begin);
    const Tensor<T> logits = compute_logits(model, input, hook);
    double total = 0.0;
    for (std::size_t i = 0; i < opt.size(); ++i) {
      const std::size_t pos = context.size() - 1 + i;  // predicts full[pos + 1]
      total += log_prob(logits.row(pos - begin), full[pos + 1]);
    }
    scores.push_back(total / static_cast<double>(opt.size()));
  }
  return predict_from_scores(std::move(scores));
}

template <typename T>
Scorer make_scorer(const TransformerModel<T>& model, const ProjectionHook<T>* hook) {
  return [&model, hook](std::string_view query, std::span<const std::string> options) {
    return score_classification(model, query, options, hook);
  };
}

std::uint64_t item_seed(std::uint64_t seed, const ClassificationItem& item) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    h = (h ^ 0xffu) * 1099511628211ULL;
  };
  mix(item.context);
  mix(item.question);
  for (const auto& o : item.options) mix(o);
  return h;
}

std::vector<ClassificationItem> draw_shots(const TaskDataset& task, const ClassificationItem& query, std::size_t shots,
                                           std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < task.train.size(); ++i)
    if (!(task.train[i] == query)) pool.push_back(i);
  if (shots > pool.size()) {
    throw ContractError(task.id + ": " + std::to_string(shots) + " shots requested but the train pool has " +
                        std::to_string(pool.size()));
  }
  std::mt19937_64 rng(item_seed(seed, query));
  std::vector<ClassificationItem> out;
  for (std::size_t i = 0; i < shots; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(task.train[pool[i]]);
  }
  return out;
}

double evaluate_accuracy(const Scorer& scorer, const TaskDataset& task, const PromptTemplate& tmpl, std::size_t shots,
                         std::uint64_t seed) {
  if (task.eval.empty()) throw ContractError(task.id + ": eval split is empty");
  if (shots > task.train.size()) {
    throw ContractError(task.id + ": " + std::to_string(shots) + " shots exceed train pool of " +
                        std::to_string(task.train.size()));
  }
  std::size_t correct = 0;
  for (const auto& item : task.eval) {
    const auto context = draw_shots(task, item, shots, seed);
    const auto text = assemble_few_shot(tmpl, context, item);
    if (scorer(text, item.options).predicted == item.gold) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.eval.size());
}

template <typename T>
double evaluate_perplexity(const TransformerModel<T>& model, std::string_view corpus, std::size_t window,
                           const ProjectionHook<T>* hook) {
  const auto tokens = Tokenizer{}.encode(corpus);
  if (tokens.size() < 2) throw ContractError("perplexity corpus must have at least two tokens");
  if (window < 2 || window > model.config.max_seq_len) {
    throw ContractError("perplexity window must lie in [2, max_seq_len]");
  }
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start + 1 < tokens.size(); start += window) {
    const std::size_t len = std::min(window, tokens.size() - start);
    if (len < 2) break;
    const auto input = std::span<const std::size_t>(tokens).subspan(start, len - 1);
    const Tensor<T> logits = compute_logits(model, input, hook);
    for (std::size_t i = 0; i + 1 < len; ++i) {
      nll -= log_prob(logits.row(i), tokens[start + i + 1]);
      ++count;
    }
  }
  return std::exp(nll / static_cast<double>(count));
}

nlohmann::json PromptMatrix::to_json() const {
  nlohmann::json best = nlohmann::json::object();
  for (std::size_t t = 0; t < tasks.size(); ++t) best[tasks[t]] = templates.at(best_template[t]);
  return {{"templates", templates}, {"tasks", tasks}, {"accuracy", accuracy}, {"best_template", best}};
}

PromptMatrix prompt_task_matrix(const std::function<Scorer(std::size_t row)>& scorer_for_row,
                                const std::vector<PromptTemplate>& templates, const std::vector<TaskDataset>& tasks,
                                std::size_t shots, std::uint64_t seed) {
  if (templates.empty() || tasks.empty()) throw ContractError("prompt matrix needs templates and tasks");
  PromptMatrix m;
  for (const auto& t : templates) m.templates.push_back(t.id);
  for (const auto& t : tasks) m.tasks.push_back(t.id);
  m.accuracy.assign(templates.size(), std::vector<double>(tasks.size()));
  for (std::size_t r = 0; r < templates.size(); ++r) {
    const Scorer scorer = scorer_for_row(r);
    for (std::size_t c = 0; c < tasks.size(); ++c) {
      m.accuracy[r][c] = evaluate_accuracy(scorer, tasks[c], templates[r], shots, seed);
    }
  }
  for (std::size_t c = 0; c < tasks.size(); ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < templates.size(); ++r)
      if (m.accuracy[r][c] > m.accuracy[best][c]) best = r;
    m.best_template.push_back(best);
  }
  return m;
}

PromptMatrix prompt_task_matrix(const Scorer& scorer, const std::vector<PromptTemplate>& templates,
                                const std::vector<TaskDataset>& tasks, std::size_t shots, std::uint64_t seed) {
  return prompt_task_matrix([&](std::size_t) { return scorer; }, templates, tasks, shots, seed);
}

double recovery_rate(std::span<const double> accuracies, std::span<const double> baseline) {
  if (accuracies.size() != baseline.size()) {
    throw ContractError("recovery_rate: " + std::to_string(accuracies.size()) + " accuracies vs " +
                        std::to_string(baseline.size()) + " baselines");
  }
  if (accuracies.empty()) throw ContractError("recovery_rate needs at least one task");
  const double a = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
  const double b = std::accumulate(baseline.begin(), baseline.end(), 0.0) / static_cast<double>(baseline.size());
  if (!(b > 0.0)) throw ContractError("recovery_rate needs a positive baseline mean");
  return 100.0 * a / b;
}

nlohmann::json SweepReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"shots", r.shots}, {"perplexity", r.perplexity}, {"accuracy", r.accuracy}, {"average", r.average}});
  }
  return {{"corpora", corpora}, {"tasks", tasks}, {"rows", rs}};
}

SweepReport shots_sweep(const std::function<SweepRow(std::size_t shots)>& run_one, std::vector<std::size_t> shot_counts,
                        std::vector<std::string> corpora, std::vector<std::string> tasks) {
  if (shot_counts.empty()) throw ContractError("shot sweep needs at least one K");
  std::sort(shot_counts.begin(), shot_counts.end());
  SweepReport report;
  report.corpora = std::move(corpora);
  report.tasks = std::move(tasks);
  for (auto k : shot_counts) {
    SweepRow row = run_one(k);
    row.shots = k;
    row.average = row.accuracy.empty() ? 0.0
                                       : std::accumulate(row.accuracy.begin(), row.accuracy.end(), 0.0) /
                                             static_cast<double>(row.accuracy.size());
    report.rows.push_back(std::move(row));
  }
  return report;
}

template OptionScores score_classification<float>(const TransformerModel<float>&, std::string_view,
                                                  std::span<const std::string>, const ProjectionHook<float>*);
template OptionScores score_classification<double>(const TransformerModel<double>&, std::string_view,
                                                   std::span<const std::string>, const ProjectionHook<double>*);
template Scorer make_scorer<float>(const TransformerModel<float>&, const ProjectionHook<float>*);
template Scorer make_scorer<double>(const TransformerModel<double>&, const ProjectionHook<double>*);
template double evaluate_perplexity<float>(const TransformerModel<float>&, std::string_view, std::size_t,
                                           const ProjectionHook<float>*);
template double evaluate_perplexity<double>(const TransformerModel<double>&, std::string_view, std::size_t,
                                            const ProjectionHook<double>*);

}  // namespace prunelab
