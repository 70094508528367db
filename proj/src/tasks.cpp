#include "prunelab/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include <json.hpp>

#include "prunelab/checkpoint.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

void TaskDataset::validate() const {
  auto check = [&](const std::vector<ClassificationItem>& items, const char* split) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].options.empty()) throw ContractError(id + ": " + split + " item " + std::to_string(i) + " has no options");
      if (items[i].gold >= items[i].options.size()) {
        throw ContractError(id + ": " + split + " item " + std::to_string(i) + " gold index out of range");
      }
    }
  };
  check(train, "train");
  check(eval, "eval");
  for (const auto& e : eval) {
    if (std::find(train.begin(), train.end(), e) != train.end()) {
      throw ContractError(id + ": eval item '" + e.context + "' also appears in the train split");
    }
  }
}

namespace {

std::string replace_all(std::string text, const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string fill(const std::string& body, const ClassificationItem& item) {
  std::string s = replace_all(body, "{context}", item.context);
  s = replace_all(s, "{question}", item.question);
  return replace_all(s, "{options}", join(item.options, " / "));
}

}  // namespace

std::string PromptTemplate::render_solved(const ClassificationItem& item) const {
  return replace_all(fill(body, item), "{answer}", item.answer());
}

std::string PromptTemplate::render_query(const ClassificationItem& item) const {
  const auto cut = body.find("{answer}");
  return fill(cut == std::string::npos ? body : body.substr(0, cut), item);
}

std::string assemble_few_shot(const PromptTemplate& tmpl, std::span<const ClassificationItem> shots,
                              const ClassificationItem& query) {
  std::string text = tmpl.instruction;
  for (const auto& shot : shots) {
    if (shot == query) throw ContractError("few-shot assembly: the query appears among the shots");
    text += tmpl.separator;
    text += tmpl.render_solved(shot);
  }
  text += tmpl.separator;
  text += tmpl.render_query(query);
  return text;
}

std::vector<std::string> synthetic_task_names() { return {"pattern", "copy", "parity", "keyword"}; }

namespace {

constexpr const char* kLower = "abcdefghijklmnopqrstuvwxyz";
constexpr const char* kUpper = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const std::vector<std::string> kWords = {"red", "big", "cat", "sun", "oak", "ice",
                                         "owl", "jam", "fog", "gem", "ink", "map"};

std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::vector<char> distinct_letters(std::mt19937_64& rng, const char* alphabet, std::size_t n, std::size_t count) {
  std::vector<char> pool(alphabet, alphabet + n);
  std::vector<char> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + pick(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

void two_options(std::mt19937_64& rng, ClassificationItem& item, std::string correct, std::string wrong) {
  if (rng() & 1) {
    item.options = {std::move(wrong), std::move(correct)};
    item.gold = 1;
  } else {
    item.options = {std::move(correct), std::move(wrong)};
    item.gold = 0;
  }
}

}  // namespace

ClassificationItem make_synthetic_item(const std::string& task, std::uint64_t seed, std::size_t difficulty) {
  if (difficulty < 1 || difficulty > 3) throw ContractError("difficulty must be 1, 2 or 3");
  std::mt19937_64 rng(seed);
  ClassificationItem item;
  if (task == "pattern") {
    const std::size_t period = 2 + pick(rng, difficulty);
    const auto cycle = distinct_letters(rng, kLower, 26, period);
    const std::size_t len = 6 + pick(rng, 3);
    for (std::size_t i = 0; i < len; ++i) item.context.push_back(cycle[i % period]);
    two_options(rng, item, std::string(1, cycle[len % period]), std::string(1, cycle[(len + 1) % period]));
  } else if (task == "copy") {
    const std::size_t n = 2 + 2 * difficulty;
    const auto letters = distinct_letters(rng, kLower, 26, n);
    const auto caps = distinct_letters(rng, kUpper, 26, 2);
    item.context.assign(letters.begin(), letters.end());
    item.context.insert(item.context.begin() + static_cast<std::ptrdiff_t>(pick(rng, n + 1)), caps[0]);
    two_options(rng, item, std::string(1, caps[0]), std::string(1, caps[1]));
  } else if (task == "parity") {
    const std::size_t max_stars = 2 * difficulty;
    const std::size_t len = std::max<std::size_t>(6, max_stars + 2);
    const bool odd = rng() & 1;
    const std::size_t stars = 2 * pick(rng, difficulty) + (odd ? 1 : 2);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(kLower[pick(rng, 8)]);
    std::vector<std::size_t> pos(len);
    for (std::size_t i = 0; i < len; ++i) pos[i] = i;
    for (std::size_t i = 0; i < stars; ++i) {
      std::swap(pos[i], pos[i + pick(rng, len - i)]);
      s[pos[i]] = '*';
    }
    item.context = s;
    item.options = {"even", "odd"};
    item.gold = odd ? 1 : 0;
  } else if (task == "keyword") {
    const std::size_t pairs = difficulty + 1;
    const auto keys = distinct_letters(rng, kLower, 8, pairs);
    std::vector<std::size_t> w(kWords.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = i;
    for (std::size_t i = 0; i < pairs; ++i) std::swap(w[i], w[i + pick(rng, w.size() - i)]);
    for (std::size_t i = 0; i < pairs; ++i) {
      if (i) item.context += " ";
      item.context += std::string(1, keys[i]) + "=" + kWords[w[i]];
    }
    const std::size_t asked = pick(rng, pairs);
    const std::size_t other = (asked + 1 + pick(rng, pairs - 1)) % pairs;
    item.question = std::string(1, keys[asked]);
    two_options(rng, item, kWords[w[asked]], kWords[w[other]]);
  } else {
    throw ContractError("unknown synthetic task '" + task + "'");
  }
  return item;
}

TaskDataset make_synthetic_task(const std::string& task, std::size_t n_train, std::size_t n_eval, std::uint64_t seed,
                                std::size_t difficulty) {
  TaskDataset ds;
  ds.id = task;
  std::set<std::string> seen;
  std::mt19937_64 seeds(seed);
  auto draw = [&](std::vector<ClassificationItem>& into, std::size_t n) {
    std::size_t attempts = 0;
    while (into.size() < n) {
      if (++attempts > 100 * (n + 10)) throw ContractError("cannot draw enough distinct items for " + task);
      auto item = make_synthetic_item(task, seeds(), difficulty);
      if (seen.insert(item.context + "|" + item.question).second) into.push_back(std::move(item));
    }
  };
  draw(ds.eval, n_eval);
  draw(ds.train, n_train);
  ds.validate();
  return ds;
}

PromptTemplate default_template(const std::string& task) {
  if (task == "pattern") return {"pattern", "Continue the pattern.", "seq {context} next {answer}", "\n"};
  if (task == "copy") return {"copy", "Copy the capital letter.", "text {context} cap {answer}", "\n"};
  if (task == "parity") return {"parity", "Star count even or odd?", "marks {context} is {answer}", "\n"};
  if (task == "keyword") return {"keyword", "Look up the key.", "{context} key {question} val {answer}", "\n"};
  throw ContractError("no default template for task '" + task + "'");
}

std::string synthetic_corpus(const std::vector<std::string>& tasks, std::size_t items, std::uint64_t seed) {
  if (tasks.empty()) throw ContractError("synthetic corpus needs at least one task");
  std::mt19937_64 rng(seed);
  std::string text;
  for (std::size_t i = 0; i < items; ++i) {
    const std::string& task = tasks[static_cast<std::size_t>(rng() % tasks.size())];
    const auto tmpl = default_template(task);
    text += tmpl.instruction + tmpl.separator + tmpl.render_solved(make_synthetic_item(task, rng())) + "\n";
  }
  return text;
}

TaskDataset load_jsonl(const std::filesystem::path& path, std::string id) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  TaskDataset ds;
  ds.id = std::move(id);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.contains("text")) {
      ds.texts.push_back(j.at("text").get<std::string>());
      continue;
    }
    ClassificationItem item;
    try {
      item.context = j.at("context").get<std::string>();
      item.options = j.at("options").get<std::vector<std::string>>();
      item.gold = j.at("gold").get<std::size_t>();
      item.question = j.value("question", std::string{});
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    (j.value("split", std::string("eval")) == "train" ? ds.train : ds.eval).push_back(std::move(item));
  }
  ds.validate();
  return ds;
}

void save_jsonl(const TaskDataset& dataset, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write dataset '" + path.string() + "'");
  auto emit = [&](const ClassificationItem& item, const char* split) {
    nlohmann::json j{{"context", item.context}, {"options", item.options}, {"gold", item.gold}, {"split", split}};
    if (!item.question.empty()) j["question"] = item.question;
    os << j.dump() << '\n';
  };
  for (const auto& item : dataset.train) emit(item, "train");
  for (const auto& item : dataset.eval) emit(item, "eval");
  for (const auto& t : dataset.texts) os << nlohmann::json{{"text", t}}.dump() << '\n';
}

}  // namespace prunelab
