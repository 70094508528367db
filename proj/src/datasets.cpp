#include "prunelab/datasets.hpp"

#include <algorithm>
#include <random>

#include "prunelab/tokenizer.hpp"

namespace prunelab {

template <typename T>
std::vector<TrainExample<T>> render_examples(const std::vector<ClassificationItem>& items, const PromptTemplate& tmpl,
                                             const ExampleOptions& options) {
  if (options.items_per_sequence < 1) throw ContractError("items_per_sequence must be >= 1");
  if (options.context_weight < 0.0) throw ContractError("context weight must be non-negative");
  const Tokenizer tok;
  std::mt19937_64 rng(options.seed);
  const std::size_t per = std::min(options.items_per_sequence, items.size());
  std::vector<TrainExample<T>> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<std::size_t> chosen;
    std::vector<std::size_t> pool;
    for (std::size_t j = 0; j < items.size(); ++j)
      if (j != i) pool.push_back(j);
    for (std::size_t c = 0; c + 1 < per; ++c) {
      const std::size_t k = c + static_cast<std::size_t>(rng() % (pool.size() - c));
      std::swap(pool[c], pool[k]);
      chosen.push_back(pool[c]);
    }
    chosen.push_back(i);

    TrainExample<T> ex;
    std::vector<bool> answer{false};
    ex.tokens.push_back(Tokenizer::kBos);
    auto push = [&](const std::string& text, bool is_answer) {
      for (auto id : tok.encode(text)) {
        ex.tokens.push_back(id);
        answer.push_back(is_answer);
      }
    };
    push(tmpl.instruction, false);
    for (auto j : chosen) {
      push(tmpl.separator, false);
      push(tmpl.render_query(items[j]), false);
      push(items[j].answer(), true);
    }
    for (std::size_t p = 0; p + 1 < ex.tokens.size(); ++p) {
      ex.weights.push_back(static_cast<T>(answer[p + 1] ? 1.0 : options.context_weight));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

template std::vector<TrainExample<float>> render_examples<float>(const std::vector<ClassificationItem>&,
                                                                 const PromptTemplate&, const ExampleOptions&);
template std::vector<TrainExample<double>> render_examples<double>(const std::vector<ClassificationItem>&,
                                                                   const PromptTemplate&, const ExampleOptions&);

}  // namespace prunelab
