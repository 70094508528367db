#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/autodiff.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay; moments keyed by parameter name.
template <typename T>
class AdamW {
 public:
  struct Slot {
    std::string name;
    Tensor<T>* param;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(const std::vector<Slot>& params, const TensorMap<T>& grads, double lr);
  std::size_t steps() const noexcept { return steps_; }

 private:
  AdamWConfig config_;
  std::size_t steps_ = 0;
  TensorMap<double> m_, v_;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t warmup_steps = 100;
  AdamWConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  std::uint64_t seed = 0;
  /// Hard cap on optimizer steps; unset means epochs * ceil(n / batch).
  std::optional<std::size_t> max_steps;

  void validate() const;
  std::size_t total_steps(std::size_t examples) const;
  /// Warmup length actually used, min(warmup_steps, total_steps).
  std::size_t effective_warmup(std::size_t examples) const;
};

/// Linear ramp from 0 to lr over `warmup` steps (1-based), then constant.
double warmup_lr(double lr, std::size_t step, std::size_t warmup);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::size_t warmup = 0;
  std::size_t examples = 0;

  nlohmann::json to_json() const;
};

/// A token sequence and the weight of each of its len-1 predictions.
template <typename T>
struct TrainExample {
  std::vector<std::size_t> tokens;
  std::vector<T> weights;
};

/// Computes the loss of one example and adds its gradients into `accum`.
template <typename T>
using LossAndGrad = std::function<double(std::size_t example, TensorMap<T>& accum)>;

/// Shuffled mini-batch loop shared by pretraining and adapter tuning. Each
/// step averages per-example losses and gradients over the batch.
template <typename T>
TrainLog run_training(std::size_t example_count, const TrainConfig& config, const std::vector<typename AdamW<T>::Slot>& params,
                      const LossAndGrad<T>& loss_and_grad);

/// Full-parameter training of every model weight.
template <typename T>
TrainLog train_full(TransformerModel<T>& model, const std::vector<TrainExample<T>>& examples, const TrainConfig& config);

}  // namespace prunelab
