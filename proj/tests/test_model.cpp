#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include <unistd.h>

#include "helpers.hpp"
#include "prunelab/checkpoint.hpp"
#include "prunelab/model.hpp"
#include "prunelab/tokenizer.hpp"

using namespace prunelab;
namespace fs = std::filesystem;

namespace {

std::size_t enumerated_parameter_count(const ModelConfig& c) {
  const std::size_t attn = c.n_heads * c.head_dim;
  std::vector<std::vector<std::size_t>> shapes;
  shapes.push_back({c.vocab_size, c.embed_dim});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    shapes.push_back({c.embed_dim});
    for (int i = 0; i < 3; ++i) shapes.push_back({attn, c.embed_dim});
    shapes.push_back({c.embed_dim, attn});
    shapes.push_back({c.embed_dim});
    for (int i = 0; i < 2; ++i) shapes.push_back({c.ffn_dim, c.embed_dim});
    shapes.push_back({c.embed_dim, c.ffn_dim});
  }
  shapes.push_back({c.embed_dim});
  shapes.push_back({c.vocab_size, c.embed_dim});
  std::size_t total = 0;
  for (const auto& s : shapes) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    total += n;
  }
  return total;
}

std::vector<std::size_t> fixed_tokens() { return Tokenizer{}.encode("desk lab"); }

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("prunelab_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("tokenizer round-trips every byte") {
  Tokenizer tok;
  std::string all;
  for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
  auto ids = tok.encode(all);
  CHECK(ids.size() == 256);
  for (auto id : ids) CHECK(id < tok.vocab_size());
  CHECK(tok.decode(ids) == all);
  CHECK(tok.decode({Tokenizer::kBos, 'h', 'i', Tokenizer::kEos, Tokenizer::kPad}) == "hi");
  CHECK_THROWS_AS(tok.decode({259}), ContractError);
}

TEST_CASE("build_model parameter count matches enumerated shapes") {
  const auto cfg = testing::toy_config();
  auto model = build_model<float>(cfg);
  CHECK(model.parameter_count() == enumerated_parameter_count(cfg));
  CHECK(model.parameter_count() == 37216);
}

TEST_CASE("build_model is deterministic per seed") {
  auto a = build_model<float>(testing::toy_config(3));
  auto b = build_model<float>(testing::toy_config(3));
  auto c = build_model<float>(testing::toy_config(4));
  CHECK(weights_checksum(a) == weights_checksum(b));
  CHECK(a == b);
  CHECK(weights_checksum(a) != weights_checksum(c));
}

TEST_CASE("build_model rejects inconsistent dimensions") {
  auto cfg = testing::toy_config();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(build_model<float>(cfg), ContractError);
  cfg = testing::toy_config();
  cfg.ffn_dim = 0;
  CHECK_THROWS_AS(build_model<float>(cfg), ContractError);
}

TEST_CASE("forward shape and input contract") {
  auto model = build_model<float>(testing::toy_config());
  const auto tokens = fixed_tokens();
  auto logits = compute_logits(model, std::span<const std::size_t>(tokens));
  CHECK(logits.shape() == Shape{8, 259});
  CHECK(logits.all_finite());
  const std::vector<std::size_t> empty;
  CHECK_THROWS_AS(compute_logits(model, std::span<const std::size_t>(empty)), ContractError);
  const std::vector<std::size_t> bad{1, 259};
  CHECK_THROWS_AS(compute_logits(model, std::span<const std::size_t>(bad)), ContractError);
  const std::vector<std::size_t> too_long(65, 1);
  CHECK_THROWS_AS(compute_logits(model, std::span<const std::size_t>(too_long)), ContractError);
}

TEST_CASE("forward is causal for 1, 2 and 3 layers") {
  for (std::size_t layers : {1u, 2u, 3u}) {
    auto cfg = testing::toy_config(layers);
    cfg.n_layers = layers;
    auto model = build_model<double>(cfg);
    std::vector<std::size_t> tokens{5, 70, 101, 33, 200, 9};
    auto short_logits = compute_logits(model, std::span<const std::size_t>(tokens));
    tokens.push_back(42);
    tokens.push_back(17);
    auto long_logits = compute_logits(model, std::span<const std::size_t>(tokens));
    double worst = 0.0;
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t v = 0; v < 259; ++v) worst = std::max(worst, std::abs(short_logits.at(t, v) - long_logits.at(t, v)));
    INFO("layers " << layers);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("golden logits fixture") {
  auto model = build_model<float>(testing::toy_config(2024));
  const auto tokens = fixed_tokens();
  auto logits = compute_logits(model, std::span<const std::size_t>(tokens));
  const fs::path fixture = fs::path(PRUNELAB_FIXTURE_DIR) / "golden_logits.json";
  if (std::getenv("PRUNELAB_RECORD_GOLDEN")) {
    nlohmann::json j = {{"seed", 2024}, {"text", "desk lab"}, {"shape", logits.shape()}, {"logits", logits.storage()}};
    std::ofstream(fixture) << j.dump() << "\n";
  }
  REQUIRE(fs::exists(fixture));
  nlohmann::json j;
  std::ifstream(fixture) >> j;
  auto expected = j.at("logits").get<std::vector<double>>();
  REQUIRE(expected.size() == logits.numel());
  double worst = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) worst = std::max(worst, std::abs(expected[i] - logits[i]));
  CHECK(worst <= 1e-5);
}

TEST_CASE("uniform logits give ln(vocab) loss") {
  auto model = build_model<double>(testing::toy_config());
  model.lm_head.fill(0.0);
  const auto tokens = fixed_tokens();
  Tape<double> tape(false);
  Var loss = next_token_loss(tape, model, std::span<const std::size_t>(tokens));
  CHECK(tape.value(loss).item() == doctest::Approx(std::log(259.0)).epsilon(1e-12));
}

TEST_CASE("confident correct prediction drives loss toward zero") {
  auto model = build_model<double>(testing::toy_config());
  const std::vector<std::size_t> tokens(6, 'a');
  // Identical tokens give identical hidden states; read them through an identity head.
  model.lm_head.fill(0.0);
  for (std::size_t i = 0; i < model.config.embed_dim; ++i) model.lm_head.at(i, i) = 1.0;
  auto probe = compute_logits(model, std::span<const std::size_t>(tokens));
  double previous = INFINITY;
  for (double s : {0.25, 1.0, 4.0, 100.0}) {
    model.lm_head.fill(0.0);
    for (std::size_t i = 0; i < model.config.embed_dim; ++i) model.lm_head.at('a', i) = s * probe.at(0, i);
    Tape<double> tape(false);
    const double loss = tape.value(next_token_loss(tape, model, std::span<const std::size_t>(tokens))).item();
    CHECK(loss <= previous);
    if (s < 1.0) CHECK(loss > 0.0);
    previous = loss;
  }
  CHECK(previous < 1e-6);
}

TEST_CASE("next-token loss matches a direct softmax cross-entropy") {
  auto model = build_model<double>(testing::toy_config(9));
  const auto tokens = Tokenizer{}.encode("the quick brown fox");
  auto logits = compute_logits(model, std::span<const std::size_t>(tokens));
  long double total = 0;
  for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
    long double mx = -INFINITY;
    for (std::size_t v = 0; v < 259; ++v) mx = std::max<long double>(mx, logits.at(t, v));
    long double z = 0;
    for (std::size_t v = 0; v < 259; ++v) z += std::exp(static_cast<long double>(logits.at(t, v)) - mx);
    total += std::log(z) + mx - logits.at(t, tokens[t + 1]);
  }
  const double oracle = static_cast<double>(total / (tokens.size() - 1));
  Tape<double> tape;
  const double loss = tape.value(next_token_loss(tape, model, std::span<const std::size_t>(tokens))).item();
  CHECK(std::abs(loss - oracle) <= 1e-6);
  const std::vector<std::size_t> one{5};
  Tape<double> t2;
  CHECK_THROWS_AS(next_token_loss(t2, model, std::span<const std::size_t>(one)), ContractError);
}

TEST_CASE("model gradients match finite differences") {
  auto cfg = testing::tiny_config(5);
  auto model = build_model<double>(cfg);
  const std::vector<std::size_t> tokens{3, 60, 7, 7, 120, 44, 9, 250};
  ForwardOptions<double> opts;
  opts.trainable_base = true;
  Tape<double> tape;
  auto analytic = tape.grad(next_token_loss(tape, model, std::span<const std::size_t>(tokens), opts));
  TensorMap<double> subset;
  for (const char* name : {"layers.0.q_proj", "layers.1.down_proj", "layers.0.attn_norm", "final_norm"}) {
    REQUIRE(model.find(name));
    subset.emplace(name, *model.find(name));
  }
  auto fd = finite_diff_gradient(
      [&](const TensorMap<double>& p) {
        auto m = model;
        m.set_parameters(p);
        Tape<double> t(false);
        return t.value(next_token_loss(t, m, std::span<const std::size_t>(tokens))).item();
      },
      subset, 1e-5);
  for (const auto& [name, g] : fd) {
    INFO(name);
    CHECK(relative_error(analytic.at(name), g) <= 1e-4);
  }
}

TEST_CASE("rms norm ignores positive input scale") {
  auto x = testing::random_tensor<double>({4, 16}, 21);
  auto gain = testing::random_tensor<double>({16}, 22);
  Tape<double> tape(false);
  Var g = tape.constant(gain);
  const double eps = 1e-6;
  const auto base = tape.value(ops::rms_norm(tape, tape.constant(x), g, eps));
  for (double c : {0.5, 3.0, 250.0}) {
    auto scaled = x;
    scaled.scale_inplace(c);
    const auto out = tape.value(ops::rms_norm(tape, tape.constant(scaled), g, eps));
    CHECK(max_abs_diff(base, out) <= 1e-5);
  }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto model = build_model<float>(testing::toy_config(77));
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(model, path);
  auto loaded = load_checkpoint<float>(path);
  CHECK(loaded == model);
  CHECK(weights_checksum(loaded) == weights_checksum(model));
  const auto tokens = fixed_tokens();
  CHECK(compute_logits(loaded, std::span<const std::size_t>(tokens)) ==
        compute_logits(model, std::span<const std::size_t>(tokens)));
  {
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    CHECK(std::string(magic, 8) == "PLAB0001");
  }
  fs::remove(path);
}

TEST_CASE("checkpoint loading rejects damaged files") {
  const auto path = temp_path("bad.ckpt");
  std::ofstream(path, std::ios::binary) << "NOTACKPT0000000000";
  CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
  auto model = build_model<float>(testing::tiny_config());
  save_checkpoint(model, path);
  fs::resize_file(path, fs::file_size(path) - 4);
  CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
  fs::remove(path);
  CHECK_THROWS_AS(load_checkpoint<float>(path), IoError);
}
