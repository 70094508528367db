#pragma once

#include <cstdint>
#include <random>

#include "prunelab/model.hpp"
#include "prunelab/tensor.hpp"

namespace testing {

template <typename T>
prunelab::Tensor<T> random_tensor(prunelab::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  prunelab::Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

inline prunelab::ModelConfig toy_config(std::uint64_t seed = 1) {
  prunelab::ModelConfig c;
  c.vocab_size = 259;
  c.embed_dim = 32;
  c.n_layers = 2;
  c.n_heads = 4;
  c.head_dim = 8;
  c.ffn_dim = 64;
  c.max_seq_len = 64;
  c.rng_seed = seed;
  return c;
}

inline prunelab::ModelConfig tiny_config(std::uint64_t seed = 1) {
  prunelab::ModelConfig c;
  c.vocab_size = 259;
  c.embed_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 6;
  c.max_seq_len = 64;
  c.rng_seed = seed;
  return c;
}

}  // namespace testing
