#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prunelab/model.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

/// Low-rank update delta = R * S for a [out, in] projection: R is [out, r],
/// S is [r, in]. The applied update is (alpha / rank) * R * S.
template <typename T>
struct LoRAAdapter {
  std::string target;
  Tensor<T> R;
  Tensor<T> S;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
  Tensor<T> delta() const;
};

/// A frozen base model plus adapters keyed by target parameter name.
template <typename T>
class AdaptedModel {
 public:
  TransformerModel<T> base;
  std::map<std::string, LoRAAdapter<T>> adapters;

  /// Hook computing (x S^T) R^T * scale for adapted projections. When
  /// `trainable`, R and S are registered as tape parameters tagged
  /// "<target>.lora_R" / "<target>.lora_S". The hook borrows *this.
  ProjectionHook<T> hook(bool trainable) const;

  Tensor<T> logits(std::span<const std::size_t> tokens) const;
  std::size_t trainable_parameter_count() const;
  std::size_t parameter_count() const { return base.parameter_count() + trainable_parameter_count(); }
};

struct AttachOptions {
  std::size_t rank = 8;
  /// Unset means alpha = rank (net scale 1).
  std::optional<double> alpha;
  double init_std = 0.02;
  std::uint64_t seed = 0;
};

/// Adds an adapter to every q/k/v/o/gate/up/down projection. S starts at zero
/// so the adapted model initially computes exactly the base function.
template <typename T>
AdaptedModel<T> attach_adapters(const TransformerModel<T>& model, const AttachOptions& options);

/// Folds each adapter into its weight (P + scale * R * S), removes the
/// adapters from `adapted` and returns the merged model. Throws when no
/// adapters are attached.
template <typename T>
TransformerModel<T> merge_adapters(AdaptedModel<T>& adapted);

/// Trains adapter factors only; base weights stay untouched.
template <typename T>
TrainLog finetune(AdaptedModel<T>& adapted, const std::vector<TrainExample<T>>& examples, const TrainConfig& config);

}  // namespace prunelab
