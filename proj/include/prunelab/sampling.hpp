#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "prunelab/model.hpp"

namespace prunelab {

struct SamplingOptions {
  std::size_t max_new_tokens = 32;
  double temperature = 1.0;
  std::size_t top_k = 50;
  std::uint64_t seed = 0;
};

/// Autoregressive decoding from [bos] + prompt until eos or the token budget.
/// Temperature 0 or top_k 1 decodes greedily. Returns the decoded continuation.
template <typename T>
std::string generate(const TransformerModel<T>& model, std::string_view prompt, const SamplingOptions& options,
                     const ProjectionHook<T>* hook = nullptr);

}  // namespace prunelab
