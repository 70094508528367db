#include "prunelab/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace prunelab {

using nlohmann::json;

json config_to_json(const ModelConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim}, {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"head_dim", c.head_dim},   {"ffn_dim", c.ffn_dim},
              {"max_seq_len", c.max_seq_len}, {"rng_seed", c.rng_seed}, {"rope_base", c.rope_base},
              {"norm_eps", c.norm_eps}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.norm_eps = j.value("norm_eps", c.norm_eps);
  return c;
}

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const TransformerModel<T>& model, const std::filesystem::path& path) {
  model.validate();
  json header;
  header["config"] = config_to_json(model.config);
  header["dtype"] = "float32";
  header["heads_per_layer"] = model.heads_per_layer();
  header["ffn_per_layer"] = model.ffn_per_layer();
  json table = json::array();
  std::uint64_t offset = 0;
  model.for_each_parameter([&](const std::string& name, const Tensor<T>& t) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * 4;
  });
  header["tensors"] = table;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(kCheckpointMagic, 8);
  put_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<unsigned char> buf;
  model.for_each_parameter([&](const std::string&, const Tensor<T>& t) {
    buf.resize(t.numel() * 4);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
      for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  });
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

template <typename T>
TransformerModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PLAB0001 checkpoint");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw IoError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw IoError(std::string("bad checkpoint header: ") + e.what());
  }
  const std::size_t data_start = 16 + header_len;

  TransformerModel<T> model;
  model.config = config_from_json(header.at("config"));
  model.layers.resize(model.config.n_layers);
  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name");
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset");
    const std::size_t n = shape_numel(shape);
    if (data_start + offset + n * 4 > bytes.size()) throw IoError("tensor '" + name + "' runs past end of file");
    std::vector<T> values(n);
    const unsigned char* src = bytes.data() + data_start + offset;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(src[4 * i + b]) << (8 * b);
      values[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
    Tensor<T>* dst = nullptr;
    if (name == "tok_embed") dst = &model.tok_embed;
    else if (name == "final_norm") dst = &model.final_norm;
    else if (name == "lm_head") dst = &model.lm_head;
    else if (name.rfind("layers.", 0) == 0) {
      const auto dot = name.find('.', 7);
      const std::size_t layer = std::stoul(name.substr(7, dot - 7));
      const std::string field = name.substr(dot + 1);
      if (layer >= model.layers.size()) throw IoError("tensor '" + name + "' names a missing layer");
      auto& L = model.layers[layer];
      if (field == "attn_norm") dst = &L.attn_norm;
      else if (field == "ffn_norm") dst = &L.ffn_norm;
      else dst = &L.proj(role_from_name(field));
    }
    if (!dst) throw IoError("unknown tensor '" + name + "' in checkpoint");
    *dst = Tensor<T>(shape, std::move(values));
  }
  model.validate();
  return model;
}

template void save_checkpoint<float>(const TransformerModel<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const TransformerModel<double>&, const std::filesystem::path&);
template TransformerModel<float> load_checkpoint<float>(const std::filesystem::path&);
template TransformerModel<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace prunelab
