#include "prunelab/tokenizer.hpp"

#include "prunelab/tensor.hpp"

namespace prunelab {

std::vector<std::size_t> Tokenizer::encode(std::string_view text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string Tokenizer::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (auto id : ids) {
    if (id >= kVocabSize) throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
    if (id < kByteCount) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace prunelab
