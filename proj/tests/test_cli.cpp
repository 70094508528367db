#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("prunelab_cli_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Outcome cli(const std::string& args) {
  const auto err_path = scratch() / "stderr.txt";
  const std::string cmd = std::string(PRUNELAB_CLI) + " " + args + " 2>" + err_path.string();
  Outcome o;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.err = slurp(err_path);
  return o;
}

fs::path small_config() {
  const auto path = scratch() / "cfg.json";
  if (!fs::exists(path)) {
    json j = {{"seed", 3},
              {"model", {{"embed_dim", 16}, {"n_heads", 2}, {"head_dim", 8}, {"ffn_dim", 16}, {"max_seq_len", 96}}},
              {"pretrain", {{"items_per_task", 40}, {"steps", 5}}},
              {"calibration", {{"count", 2}, {"seq_len", 32}, {"corpus_items", 10}}},
              {"recovery", {{"shots", 4}, {"train", {{"max_steps", 3}}}}},
              {"eval",
               {{"tasks", {"pattern", "copy"}},
                {"train_pool", 20},
                {"eval_items", 5},
                {"sweep_shots", {2, 4}},
                {"ppl_items", 3},
                {"ppl_window", 64}}},
              {"paths", {{"out_dir", (scratch() / "default_run").string()}}}};
    std::ofstream(path) << j.dump(2);
  }
  return path;
}

std::string with_config(const std::string& args) { return args + " --config " + small_config().string(); }

}  // namespace

TEST_CASE("version and help exit cleanly") {
  auto v = cli("--version");
  CHECK(v.code == 0);
  CHECK(v.out.find("prunelab") != std::string::npos);
  for (const char* sub : {"build", "prune", "finetune", "eval", "prompt-matrix", "sweep-shots", "generate", "graph",
                          "report", "run"}) {
    const std::string name = sub;
    INFO(name);
    auto h = cli(name + " --help");
    CHECK(h.code == 0);
    if (name != "generate" && name != "report") CHECK(h.out.find("--config") != std::string::npos);
    CHECK(cli(std::string(sub) + " --version").code == 0);
  }
}

TEST_CASE("errors are reported as JSON on stderr") {
  auto missing = cli("prune --in /definitely/not/here.ckpt --out x.ckpt");
  CHECK(missing.code != 0);
  auto j = json::parse(missing.err);
  CHECK(j.contains("error"));
  CHECK(j.at("stage") == "cli");

  const auto garbage = scratch() / "garbage.ckpt";
  std::ofstream(garbage) << "not a checkpoint";
  auto bad = cli("eval --in " + garbage.string());
  CHECK(bad.code == 1);
  CHECK(json::parse(bad.err).contains("error"));

  auto unknown = cli("frobnicate");
  CHECK(unknown.code != 0);
}

TEST_CASE("reference report recomputes the published grid") {
  auto r = cli("report --reference");
  CHECK(r.code == 0);
  CHECK(r.out.find("95.68") != std::string::npos);
  CHECK(r.out.find("86.54") != std::string::npos);
  CHECK(r.out.find("LLM-Pruner") != std::string::npos);
}

TEST_CASE("subcommands chain through checkpoints") {
  const auto d = scratch();
  REQUIRE(cli(with_config("build --out " + (d / "base.ckpt").string())).code == 0);
  auto pr = cli(with_config("prune --in " + (d / "base.ckpt").string() + " --out " + (d / "pruned.ckpt").string() +
                            " --ratio 0.5 --scores-out " + (d / "scores.json").string()));
  REQUIRE(pr.code == 0);
  CHECK(json::parse(slurp(d / "scores.json")).size() > 0);
  CHECK(fs::file_size(d / "pruned.ckpt") < fs::file_size(d / "base.ckpt"));

  REQUIRE(cli(with_config("finetune --in " + (d / "pruned.ckpt").string() + " --out " + (d / "tuned.ckpt").string() +
                          " --task pattern --shots 4 --rank 2"))
              .code == 0);
  auto ev = cli(with_config("eval --in " + (d / "tuned.ckpt").string() + " --task pattern --out " +
                            (d / "eval.json").string()));
  REQUIRE(ev.code == 0);
  auto report = json::parse(slurp(d / "eval.json"));
  CHECK(report.at("tasks") == json::array({"pattern"}));
  CHECK(report.at("accuracy").size() == 1);

  const std::string gen = "generate --in " + (d / "base.ckpt").string() + " --prompt abc --max-tokens 5 --seed 4";
  auto g1 = cli(gen);
  auto g2 = cli(gen);
  CHECK(g1.code == 0);
  CHECK(g1.out == g2.out);

  auto gr = cli(with_config("graph --dump"));
  REQUIRE(gr.code == 0);
  CHECK(json::parse(gr.out).is_object());
}

TEST_CASE("run is byte-for-byte reproducible and names failing stages") {
  const auto a = scratch() / "run_a", b = scratch() / "run_b";
  REQUIRE(cli(with_config("run --out-dir " + a.string())).code == 0);
  REQUIRE(cli(with_config("run --out-dir " + b.string())).code == 0);
  for (std::string f : {"eval.json", "eval.txt", "prompt_matrix.json", "sweep.json", "compression.json"}) {
    INFO(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  auto rep = cli("report --in " + a.string());
  CHECK(rep.code == 0);
  CHECK_FALSE(rep.out.empty());

  auto skipped = cli(with_config("run --skip pretrain --out-dir " + (scratch() / "empty_run").string()));
  CHECK(skipped.code == 1);
  CHECK(json::parse(skipped.err).at("stage") == "pretrain");
}
