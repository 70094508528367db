#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "prunelab/datasets.hpp"
#include "prunelab/lora.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/tasks.hpp"
#include "prunelab/tokenizer.hpp"

using namespace prunelab;

namespace {

std::vector<std::vector<std::size_t>> fixed_inputs() {
  Tokenizer tok;
  std::vector<std::vector<std::size_t>> out;
  for (int i = 0; i < 10; ++i) out.push_back(tok.encode("sample " + std::to_string(i * 13) + "!"));
  return out;
}

template <typename T>
double adapter_vs_plain(const AdaptedModel<T>& adapted, const TransformerModel<T>& plain) {
  double worst = 0.0;
  for (const auto& in : fixed_inputs()) {
    worst = std::max(worst, max_abs_diff(adapted.logits(std::span<const std::size_t>(in)),
                                         compute_logits(plain, std::span<const std::size_t>(in))));
  }
  return worst;
}

template <typename T>
void randomize_s(AdaptedModel<T>& adapted, std::uint64_t seed) {
  for (auto& [name, a] : adapted.adapters) a.S = testing::random_tensor<T>(a.S.shape(), seed++, 0.05);
}

std::vector<TrainExample<float>> pattern_examples(std::size_t n) {
  auto task = make_synthetic_task("pattern", n, 1, 3);
  return render_examples<float>(task.train, default_template("pattern"), {});
}

double dataset_loss(const AdaptedModel<float>& adapted, const std::vector<TrainExample<float>>& examples) {
  const auto hook = adapted.hook(false);
  ForwardOptions<float> opts;
  opts.hook = &hook;
  double total = 0.0;
  for (const auto& ex : examples) {
    Tape<float> tape(false);
    total += tape.value(next_token_loss(tape, adapted.base, std::span<const std::size_t>(ex.tokens), opts,
                                        std::span<const float>(ex.weights)))
                 .item();
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace

TEST_CASE("attach is behavior-preserving") {
  SUBCASE("64-bit exact") {
    auto model = build_model<double>(testing::toy_config(1));
    auto adapted = attach_adapters(model, {});
    CHECK(adapter_vs_plain(adapted, model) == 0.0);
  }
  SUBCASE("32-bit") {
    auto model = build_model<float>(testing::toy_config(1));
    auto adapted = attach_adapters(model, {});
    CHECK(adapter_vs_plain(adapted, model) <= 1e-6);
  }
}

TEST_CASE("adapters cover all seven projections with zero-initialized S") {
  auto model = build_model<float>(testing::toy_config(2));
  auto adapted = attach_adapters(model, {.rank = 4, .seed = 3});
  CHECK(adapted.adapters.size() == 2 * 7);
  for (const auto& [name, a] : adapted.adapters) {
    const auto* w = model.find(name);
    REQUIRE(w);
    CHECK(a.R.shape() == Shape{w->rows(), 4});
    CHECK(a.S.shape() == Shape{4, w->cols()});
    for (float v : a.S.data()) CHECK(v == 0.0f);
    CHECK(a.scaling() == 1.0);
    CHECK(a.delta().shape() == w->shape());
  }
}

TEST_CASE("trainable count is r times the summed target extents") {
  auto model = build_model<float>(testing::toy_config(2));
  PruningPlan plan;
  plan.entries = {{0, GroupKind::attention_head, {1, 3}}, {1, GroupKind::ffn_channel, {0, 5, 9}}};
  auto pruned = apply_pruning(model, plan);
  for (std::size_t r : {1u, 8u}) {
    auto adapted = attach_adapters(pruned, {.rank = r});
    std::size_t expected = 0;
    for (std::size_t l = 0; l < pruned.layers.size(); ++l)
      for (auto role : kAllRoles) {
        const auto& w = pruned.layers[l].proj(role);
        expected += r * (w.rows() + w.cols());
      }
    CHECK(adapted.trainable_parameter_count() == expected);
  }
}

TEST_CASE("rank outside the target dimensions is rejected") {
  auto cfg = testing::tiny_config(1);
  auto model = build_model<float>(cfg);
  CHECK_THROWS_AS(attach_adapters(model, {.rank = 0}), ContractError);
  CHECK_NOTHROW(attach_adapters(model, {.rank = cfg.ffn_dim}));
  CHECK_THROWS_AS(attach_adapters(model, {.rank = cfg.ffn_dim + 1}), ContractError);
}

TEST_CASE("merge right after attach restores the weights") {
  auto model = build_model<float>(testing::toy_config(4));
  auto adapted = attach_adapters(model, {});
  auto merged = merge_adapters(adapted);
  CHECK(merged == model);
  CHECK(merged.parameter_count() == model.parameter_count());
  CHECK_THROWS_AS(merge_adapters(adapted), ContractError);
}

TEST_CASE("merged logits match the adapter path") {
  auto model = build_model<float>(testing::toy_config(5));
  auto adapted = attach_adapters(model, {.rank = 8, .init_std = 0.1, .seed = 9});
  randomize_s(adapted, 40);
  auto copy = adapted;
  auto merged = merge_adapters(copy);
  CHECK(adapter_vs_plain(adapted, merged) <= 1e-5);
  CHECK(merged.parameter_count() == model.parameter_count());
}

TEST_CASE("alpha rescales the update") {
  auto model = build_model<double>(testing::toy_config(5));
  auto adapted = attach_adapters(model, {.rank = 4, .alpha = 8.0});
  randomize_s(adapted, 1);
  for (const auto& [name, a] : adapted.adapters) {
    CHECK(a.scaling() == 2.0);
    break;
  }
  auto copy = adapted;
  auto merged = merge_adapters(copy);
  const auto& a = adapted.adapters.begin()->second;
  auto expected = *model.find(a.target);
  for (std::size_t i = 0; i < expected.rows(); ++i)
    for (std::size_t j = 0; j < expected.cols(); ++j) {
      double rs = 0.0;
      for (std::size_t k = 0; k < a.rank; ++k) rs += a.R.at(i, k) * a.S.at(k, j);
      expected.at(i, j) += 2.0 * rs;
    }
  CHECK(max_abs_diff(expected, *merged.find(a.target)) <= 1e-12);
}

TEST_CASE("adapter gradients match finite differences") {
  auto model = build_model<double>(testing::tiny_config(6));
  auto adapted = attach_adapters(model, {.rank = 2, .init_std = 0.3, .seed = 2});
  randomize_s(adapted, 5);
  const std::vector<std::size_t> tokens{4, 90, 12, 12, 200, 31};
  const auto hook = adapted.hook(true);
  ForwardOptions<double> opts;
  opts.hook = &hook;
  Tape<double> tape;
  auto analytic = tape.grad(next_token_loss(tape, adapted.base, std::span<const std::size_t>(tokens), opts));
  CHECK(analytic.size() == 2 * 7 * 2);
  const std::string target = "layers.1.v_proj";
  TensorMap<double> params{{"R", adapted.adapters.at(target).R}, {"S", adapted.adapters.at(target).S}};
  auto fd = finite_diff_gradient(
      [&](const TensorMap<double>& p) {
        auto probe = adapted;
        probe.adapters.at(target).R = p.at("R");
        probe.adapters.at(target).S = p.at("S");
        const auto h = probe.hook(false);
        ForwardOptions<double> o;
        o.hook = &h;
        Tape<double> t(false);
        return t.value(next_token_loss(t, probe.base, std::span<const std::size_t>(tokens), o)).item();
      },
      params, 1e-5);
  CHECK(relative_error(analytic.at(target + ".lora_R"), fd.at("R")) <= 1e-4);
  CHECK(relative_error(analytic.at(target + ".lora_S"), fd.at("S")) <= 1e-4);
}

TEST_CASE("zero steps leave the adapted model unchanged") {
  auto model = build_model<float>(testing::toy_config(7));
  auto adapted = attach_adapters(model, {});
  const auto before = adapted;
  TrainConfig cfg;
  cfg.max_steps = 0;
  auto log = finetune(adapted, pattern_examples(10), cfg);
  CHECK(log.steps.empty());
  for (const auto& [name, a] : adapted.adapters) {
    CHECK(a.R == before.adapters.at(name).R);
    CHECK(a.S == before.adapters.at(name).S);
  }
  CHECK(adapted.base == model);
}

TEST_CASE("fine-tuning freezes the base and lowers the loss") {
  auto config = testing::toy_config(8);
  config.max_seq_len = 128;
  auto model = build_model<float>(config);
  const auto checksum = weights_checksum(model);
  auto examples = pattern_examples(50);
  auto adapted = attach_adapters(model, {.seed = 1});
  const double initial = dataset_loss(adapted, examples);
  TrainConfig cfg;
  cfg.seed = 3;
  auto log = finetune(adapted, examples, cfg);
  CHECK(log.steps.size() == 3 * 7);
  CHECK(weights_checksum(adapted.base) == checksum);
  const double final_loss = dataset_loss(adapted, examples);
  CHECK(final_loss < initial);
  auto merged = merge_adapters(adapted);
  CHECK(merged.parameter_count() == model.parameter_count());
}

TEST_CASE("base checksum is stable across 100 steps") {
  auto model = build_model<float>(testing::toy_config(9));
  const auto checksum = weights_checksum(model);
  auto adapted = attach_adapters(model, {});
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 10;
  cfg.max_steps = 100;
  cfg.lr = 1e-2;
  auto log = finetune(adapted, pattern_examples(12), cfg);
  CHECK(log.steps.size() == 100);
  CHECK(weights_checksum(adapted.base) == checksum);
}

TEST_CASE("warmup ramps linearly and is clamped to the run length") {
  CHECK(warmup_lr(1e-4, 1, 100) == doctest::Approx(1e-6));
  CHECK(warmup_lr(1e-4, 50, 100) == doctest::Approx(5e-5));
  CHECK(warmup_lr(1e-4, 100, 100) == 1e-4);
  CHECK(warmup_lr(1e-4, 150, 100) == 1e-4);
  CHECK(warmup_lr(1e-4, 3, 0) == 1e-4);

  auto model = build_model<float>(testing::tiny_config(2));
  auto adapted = attach_adapters(model, {.rank = 2});
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.warmup_steps = 4;
  cfg.epochs = 2;
  auto examples = pattern_examples(6);
  auto log = finetune(adapted, examples, cfg);
  REQUIRE(log.steps.size() == 6);
  CHECK(log.warmup == 4);
  for (const auto& s : log.steps) {
    const double expected = s.step <= 4 ? cfg.lr * static_cast<double>(s.step) / 4.0 : cfg.lr;
    CHECK(s.lr == doctest::Approx(expected).epsilon(1e-12));
  }
  cfg.warmup_steps = 100;
  CHECK(cfg.effective_warmup(examples.size()) == 6);
  auto j = log.to_json();
  CHECK(j.at("steps").size() == 6);
  CHECK(j.at("steps")[0].contains("loss"));
}

TEST_CASE("training contract errors") {
  auto model = build_model<float>(testing::tiny_config(2));
  auto adapted = attach_adapters(model, {.rank = 2});
  TrainConfig cfg;
  CHECK_THROWS_AS(finetune(adapted, std::vector<TrainExample<float>>{}, cfg), ContractError);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(finetune(adapted, pattern_examples(2), cfg), ContractError);
  AdaptedModel<float> bare{model, {}};
  CHECK_THROWS_AS(finetune(bare, pattern_examples(2), TrainConfig{}), ContractError);
  auto exploding = attach_adapters(model, {.rank = 2});
  exploding.adapters.begin()->second.S.fill(std::nanf(""));
  CHECK_THROWS_AS(finetune(exploding, pattern_examples(2), TrainConfig{}), NumericError);
}

TEST_CASE("answer-only examples weight just the answer tokens") {
  auto task = make_synthetic_task("copy", 3, 1, 1);
  const auto tmpl = default_template("copy");
  auto examples = render_examples<double>(task.train, tmpl, {});
  REQUIRE(examples.size() == 3);
  Tokenizer tok;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& ex = examples[i];
    CHECK(ex.weights.size() == ex.tokens.size() - 1);
    CHECK(ex.tokens.front() == Tokenizer::kBos);
    const auto answer = tok.encode(task.train[i].answer());
    double total = 0.0;
    for (double w : ex.weights) total += w;
    CHECK(total == static_cast<double>(answer.size()));
    for (std::size_t k = 0; k < answer.size(); ++k) {
      const std::size_t pos = ex.tokens.size() - answer.size() + k;
      CHECK(ex.tokens[pos] == answer[k]);
      CHECK(ex.weights[pos - 1] == 1.0);
    }
  }
  auto packed = render_examples<double>(task.train, tmpl, {.context_weight = 0.25, .items_per_sequence = 3});
  CHECK(packed[0].tokens.size() > examples[0].tokens.size());
  for (double w : packed[0].weights) CHECK((w == 1.0 || w == 0.25));
}
