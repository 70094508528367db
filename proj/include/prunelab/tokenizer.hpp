#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace prunelab {

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by pad, bos, eos.
class Tokenizer {
 public:
  static constexpr std::size_t kByteCount = 256;
  static constexpr std::size_t kPad = 256;
  static constexpr std::size_t kBos = 257;
  static constexpr std::size_t kEos = 258;
  static constexpr std::size_t kVocabSize = 259;

  std::vector<std::size_t> encode(std::string_view text) const;
  /// Special ids produce no bytes.
  std::string decode(const std::vector<std::size_t>& ids) const;
  std::size_t vocab_size() const noexcept { return kVocabSize; }
};

}  // namespace prunelab
