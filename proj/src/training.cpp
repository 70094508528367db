#include "prunelab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace prunelab {

template <typename T>
void AdamW<T>::step(const std::vector<Slot>& params, const TensorMap<T>& grads, double lr) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (const auto& slot : params) {
    auto git = grads.find(slot.name);
    if (git == grads.end()) continue;
    const Tensor<T>& g = git->second;
    Tensor<T>& p = *slot.param;
    if (g.shape() != p.shape()) throw ShapeError("gradient for " + slot.name + " has the wrong shape");
    auto& m = m_.try_emplace(slot.name, Tensor<double>(p.shape())).first->second;
    auto& v = v_.try_emplace(slot.name, Tensor<double>(p.shape())).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      double w = p[i];
      w -= lr * config_.weight_decay * w;
      w -= lr * update;
      p[i] = static_cast<T>(w);
    }
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("learning rate must be positive");
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
}

std::size_t TrainConfig::total_steps(std::size_t examples) const {
  const std::size_t per_epoch = (examples + batch_size - 1) / batch_size;
  std::size_t n = epochs * per_epoch;
  if (max_steps) n = std::min(n, *max_steps);
  return n;
}

std::size_t TrainConfig::effective_warmup(std::size_t examples) const {
  return std::min(warmup_steps, total_steps(examples));
}

double warmup_lr(double lr, std::size_t step, std::size_t warmup) {
  if (warmup == 0 || step >= warmup) return lr;
  return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : steps) rows.push_back({{"step", s.step}, {"loss", s.loss}, {"lr", s.lr}});
  return {{"examples", examples}, {"warmup", warmup}, {"steps", rows}};
}

template <typename T>
TrainLog run_training(std::size_t example_count, const TrainConfig& config,
                      const std::vector<typename AdamW<T>::Slot>& params, const LossAndGrad<T>& loss_and_grad) {
  config.validate();
  if (example_count == 0) throw ContractError("training needs a nonempty dataset");
  TrainLog log;
  log.examples = example_count;
  const std::size_t total = config.total_steps(example_count);
  log.warmup = config.effective_warmup(example_count);

  AdamW<T> opt(config.optimizer);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(example_count);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  while (step < total) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < example_count && step < total; start += config.batch_size) {
      ++step;
      const std::size_t end = std::min(start + config.batch_size, example_count);
      TensorMap<T> accum;
      for (const auto& slot : params) accum.emplace(slot.name, Tensor<T>(slot.param->shape()));
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) loss += loss_and_grad(order[i], accum);
      const double n = static_cast<double>(end - start);
      loss /= n;
      if (!std::isfinite(loss)) throw NumericError("non-finite training loss at step " + std::to_string(step));
      for (auto& [name, g] : accum) {
        g.scale_inplace(static_cast<T>(1.0 / n));
        if (!g.all_finite()) throw NumericError("non-finite gradient for " + name + " at step " + std::to_string(step));
      }
      const double lr = warmup_lr(config.lr, step, log.warmup);
      opt.step(params, accum, lr);
      log.steps.push_back({step, loss, lr});
    }
  }
  return log;
}

template <typename T>
TrainLog train_full(TransformerModel<T>& model, const std::vector<TrainExample<T>>& examples, const TrainConfig& config) {
  std::vector<typename AdamW<T>::Slot> params;
  model.for_each_parameter([&](const std::string& name, Tensor<T>& t) { params.push_back({name, &t}); });
  ForwardOptions<T> options;
  options.trainable_base = true;
  return run_training<T>(examples.size(), config, params, [&](std::size_t i, TensorMap<T>& accum) {
    const auto& ex = examples[i];
    Tape<T> tape;
    Var loss = next_token_loss(tape, model, std::span<const std::size_t>(ex.tokens), options,
                               std::span<const T>(ex.weights));
    for (auto& [name, g] : tape.grad(loss)) accum.at(name).add_inplace(g);
    return static_cast<double>(tape.value(loss).item());
  });
}

template class AdamW<float>;
template class AdamW<double>;
template TrainLog run_training<float>(std::size_t, const TrainConfig&, const std::vector<AdamW<float>::Slot>&,
                                      const LossAndGrad<float>&);
template TrainLog run_training<double>(std::size_t, const TrainConfig&, const std::vector<AdamW<double>::Slot>&,
                                       const LossAndGrad<double>&);
template TrainLog train_full<float>(TransformerModel<float>&, const std::vector<TrainExample<float>>&, const TrainConfig&);
template TrainLog train_full<double>(TransformerModel<double>&, const std::vector<TrainExample<double>>&,
                                     const TrainConfig&);

}  // namespace prunelab
