#include "prunelab/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "prunelab/tokenizer.hpp"

namespace prunelab {

template <typename T>
std::string generate(const TransformerModel<T>& model, std::string_view prompt, const SamplingOptions& options,
                     const ProjectionHook<T>* hook) {
  if (options.temperature < 0.0 || !std::isfinite(options.temperature)) {
    throw ContractError("temperature must be finite and non-negative");
  }
  if (options.top_k == 0) throw ContractError("top_k must be at least 1");
  const Tokenizer tok;
  std::vector<std::size_t> ids{Tokenizer::kBos};
  const auto p = tok.encode(prompt);
  ids.insert(ids.end(), p.begin(), p.end());
  const std::size_t prompt_len = ids.size();
  const bool greedy = options.temperature == 0.0 || options.top_k == 1;
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t step = 0; step < options.max_new_tokens; ++step) {
    const std::size_t window = model.config.max_seq_len;
    const std::size_t begin = ids.size() > window ? ids.size() - window : 0;
    const auto input = std::span<const std::size_t>(ids).subspan(begin);
    const Tensor<T> logits = compute_logits(model, input, hook);
    const auto last = logits.row(logits.rows() - 1);
    std::vector<std::size_t> order(last.size());
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(options.top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return last[a] > last[b] || (last[a] == last[b] && a < b); });
    std::size_t next = order[0];
    if (!greedy) {
      std::vector<double> w(k);
      const double top = static_cast<double>(last[order[0]]);
      for (std::size_t i = 0; i < k; ++i) {
        w[i] = std::exp((static_cast<double>(last[order[i]]) - top) / options.temperature);
      }
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      double u = unit(rng) * total;
      next = order[k - 1];
      for (std::size_t i = 0; i < k; ++i) {
        if (u < w[i]) {
          next = order[i];
          break;
        }
        u -= w[i];
      }
    }
    if (next == Tokenizer::kEos) break;
    ids.push_back(next);
  }
  return tok.decode(std::vector<std::size_t>(ids.begin() + static_cast<std::ptrdiff_t>(prompt_len), ids.end()));
}

template std::string generate<float>(const TransformerModel<float>&, std::string_view, const SamplingOptions&,
                                     const ProjectionHook<float>*);
template std::string generate<double>(const TransformerModel<double>&, std::string_view, const SamplingOptions&,
                                      const ProjectionHook<double>*);

}  // namespace prunelab
