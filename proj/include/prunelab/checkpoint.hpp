#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "prunelab/model.hpp"

namespace prunelab {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[9] = "PLAB0001";

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

/// Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header
/// (config, per-layer widths, tensor table with shape and byte offset), then
/// little-endian float32 tensor data in header order.
template <typename T>
void save_checkpoint(const TransformerModel<T>& model, const std::filesystem::path& path);

template <typename T>
TransformerModel<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace prunelab
