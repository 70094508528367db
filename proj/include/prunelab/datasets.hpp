#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "prunelab/tasks.hpp"
#include "prunelab/training.hpp"

namespace prunelab {

struct ExampleOptions {
  /// Loss weight of non-answer positions; 0 trains on answers only.
  double context_weight = 0.0;
  /// Solved items packed into one sequence, each answer carrying weight 1.
  std::size_t items_per_sequence = 1;
  std::uint64_t seed = 0;
};

/// One training sequence per item: [bos] + instruction, then the item and
/// (items_per_sequence - 1) companions drawn from `items`, all solved.
/// The target item comes last.
template <typename T>
std::vector<TrainExample<T>> render_examples(const std::vector<ClassificationItem>& items, const PromptTemplate& tmpl,
                                             const ExampleOptions& options);

}  // namespace prunelab
