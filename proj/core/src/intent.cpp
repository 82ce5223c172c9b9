#include "fedforge/intent.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <spdlog/spdlog.h>

#include "fedforge/error.hpp"

namespace fedforge::intent {

using nlohmann::json;

const std::string_view kSystemPrompt =
    "Your task is to provide a JSON given an instruction by the user for a federated learning task. "
    "The output should be in JSON format. Keys for JSON are algo - Classification/Regression, "
    "minibatch - size of minibatch (16), epoch- number of epochs(5), lr - learning rate, "
    "scheduler - full/random/round_robin/latency_proportional(full), clientFraction- fraction of "
    "clients involved in federated learning (1),comRounds- number of communication rounds in "
    "federated learning(10), optimizer-pytorch optimizer(Adam), loss(CrossEntropyLoss), compress- "
    "No/quantize(No), dtype-img(img),dataset-dataset used for training. Default values for each key "
    "are given inside the bracket. Separated by / are possible values for the relevant key. Your task "
    "is to create a JSON with the above keys and extract possible values from a given human prompt as "
    "values for the JSON. Respond only to the JSON.";

namespace {

// ---------------------------------------------------------------- tokens

struct Token {
  std::string raw;
  std::string low;
  bool endsSentence = false;
};

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

bool is_break(char c) {
  switch (c) {
    case ' ': case '\t': case '\n': case '\r': case '\f': case '\v':
    case ',': case ';': case '(': case ')': case '[': case ']': case '{': case '}':
    case '!': case '?': case '"':
      return true;
    default:
      return false;
  }
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::string cur;
  auto flush = [&](bool sentenceBreak) {
    bool ends = false;
    while (!cur.empty() && (cur.back() == '.' || cur.back() == '\'')) {
      ends = ends || cur.back() == '.';
      cur.pop_back();
    }
    std::size_t lead = 0;
    while (lead < cur.size() && cur[lead] == '\'') ++lead;
    cur.erase(0, lead);
    if (!cur.empty()) {
      Token t;
      t.raw = cur;
      t.low.reserve(cur.size());
      for (char c : cur) t.low.push_back(ascii_lower(c));
      t.endsSentence = ends;
      out.push_back(std::move(t));
    } else if ((ends || sentenceBreak) && !out.empty()) {
      out.back().endsSentence = true;
    }
    cur.clear();
  };
  for (char c : text) {
    if (c == '!' || c == '?' || c == '\n') {
      flush(true);
    } else if (is_break(c)) {
      flush(false);
    } else if (c == ':' || c == '=') {
      flush(false);
      out.push_back({std::string(1, c), std::string(1, c), false});
    } else {
      cur.push_back(c);
    }
  }
  flush(true);
  return out;
}

using Words = std::span<const std::string_view>;
using WordList = std::initializer_list<std::string_view>;

bool in(std::string_view w, Words set) { return std::find(set.begin(), set.end(), w) != set.end(); }
bool in(std::string_view w, WordList set) { return in(w, Words(set.begin(), set.size())); }

// ---------------------------------------------------------------- numbers

struct Number {
  double value = 0.0;
  bool integer = false;
  bool percent = false;
  bool fraction = false;  // a/b form
  double numerator = 0.0;
  double denominator = 1.0;
};

std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> word_number(std::string_view w) {
  static constexpr std::pair<std::string_view, int> kWords[] = {
      {"one", 1},      {"two", 2},        {"three", 3},     {"four", 4},      {"five", 5},
      {"six", 6},      {"seven", 7},      {"eight", 8},     {"nine", 9},      {"ten", 10},
      {"eleven", 11},  {"twelve", 12},    {"thirteen", 13}, {"fourteen", 14}, {"fifteen", 15},
      {"sixteen", 16}, {"seventeen", 17}, {"eighteen", 18}, {"nineteen", 19}, {"twenty", 20},
      {"thirty", 30},  {"forty", 40},     {"fifty", 50},    {"hundred", 100},
  };
  for (const auto& [name, v] : kWords) {
    if (name == w) return v;
  }
  return std::nullopt;
}

std::optional<Number> parse_number(std::string_view low) {
  Number n;
  if (!low.empty() && low.back() == '%') {
    n.percent = true;
    low.remove_suffix(1);
  }
  if (const auto slash = low.find('/'); slash != std::string_view::npos && !n.percent) {
    const auto a = parse_double(low.substr(0, slash));
    const auto b = parse_double(low.substr(slash + 1));
    if (!a || !b || *b <= 0.0) return std::nullopt;
    n.fraction = true;
    n.numerator = *a;
    n.denominator = *b;
    n.value = *a / *b;
    return n;
  }
  if (auto w = word_number(low); w && !n.percent) {
    n.value = *w;
    n.integer = true;
    return n;
  }
  const auto v = parse_double(low);
  if (!v) return std::nullopt;
  n.integer = low.find_first_of(".eE") == std::string_view::npos && std::floor(*v) == *v;
  n.value = n.percent ? *v / 100.0 : *v;
  if (n.percent) {
    n.numerator = *v;
    n.denominator = 100.0;
  }
  return n;
}

/// Nearest double to the value written with at most 12 decimals; turns
/// 1 - 0.3 and 7/10 into the same 0.7 the user would have typed.
double tidy(double v) { return std::round(v * 1e12) / 1e12; }

double complement(const Number& n) {
  if (n.percent || n.fraction) return tidy((n.denominator - n.numerator) / n.denominator);
  return tidy(1.0 - n.value);
}

// ---------------------------------------------------------------- parser

class Parser {
 public:
  explicit Parser(std::string_view text) : t_(tokenize(text)) {}

  json run() {
    dataset();
    counts_before_noun();
    counts_after_noun();
    learning_rate();
    batch_sizes();
    client_fraction();
    compression();
    compress_param();
    keywords();
    return out_;
  }

 private:
  std::string_view low(std::size_t i) const { return i < t_.size() ? std::string_view(t_[i].low) : ""; }
  bool ends(std::size_t i) const { return i < t_.size() && t_[i].endsSentence; }
  bool has(const char* key) const { return out_.contains(key); }

  std::optional<Number> number_at(std::size_t i) const {
    if (i >= t_.size()) return std::nullopt;
    auto n = parse_number(t_[i].low);
    if (n && !n->percent && (low(i + 1) == "percent" || (low(i + 1) == "per" && low(i + 2) == "cent"))) {
      n->percent = true;
      n->numerator = n->value;
      n->denominator = 100.0;
      n->value /= 100.0;
      n->integer = false;
    }
    return n;
  }

  /// Walks forward from `from` over filler words (without crossing a sentence
  /// end) and returns the index of the first non-filler token.
  std::optional<std::size_t> skip(std::size_t from, Words fillers, std::size_t limit = 5,
                                  std::size_t start = std::string::npos) const {
    if (start != std::string::npos && ends(start)) return std::nullopt;
    for (std::size_t j = from, n = 0; j < t_.size() && n <= limit; ++j, ++n) {
      if (!in(low(j), fillers)) return j;
      if (ends(j)) return std::nullopt;
    }
    return std::nullopt;
  }
  std::optional<std::size_t> skip(std::size_t from, WordList fillers, std::size_t limit = 5,
                                  std::size_t start = std::string::npos) const {
    return skip(from, Words(fillers.begin(), fillers.size()), limit, start);
  }

  void set(const char* key, json v) {
    if (!has(key)) out_[key] = std::move(v);
  }

  static json as_json(const Number& n) {
    if (n.integer) return static_cast<long long>(n.value);
    return n.value;
  }

  // -- dataset ---------------------------------------------------------
  void dataset() {
    static constexpr std::string_view kNotNames[] = {
        "the",      "a",        "an",     "with",     "using",    "use",     "on",       "of",
        "this",     "that",     "my",     "our",      "for",      "from",    "in",       "given",
        "custom",   "new",      "same",   "training", "train",    "test",    "testing",  "local",
        "whole",    "entire",   "following", "provided", "full",  "image",   "tabular",  "public",
        "federated", "learning", "task",  "is",       "called",   "named",   ":",        "=",
        "and",      "any",      "your",   "their",    "its",      "to",      "as",       "by",
        "dataset",  "datasets", "data",   "set",
    };
    auto candidate = [&](std::size_t i) {
      if (i >= t_.size() || in(low(i), kNotNames)) return false;
      if (parse_number(low(i))) return false;
      return std::any_of(t_[i].low.begin(), t_[i].low.end(),
                         [](char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9'); });
    };
    for (std::size_t i = 0; i < t_.size(); ++i) {
      std::size_t last = i;
      if (low(i) == "data" && low(i + 1) == "set") {
        last = i + 1;
      } else if (!in(low(i), {"dataset", "datasets", "data-set"})) {
        continue;
      }
      if (i > 0 && !ends(i - 1) && candidate(i - 1)) {
        out_["dataset"] = t_[i - 1].raw;
        return;
      }
      if (ends(last)) continue;
      auto j = skip(last + 1, {"is", "called", "named", ":", "=", "being", "titled", "as", "the"}, 4);
      if (j && candidate(*j)) {
        out_["dataset"] = t_[*j].raw;
        return;
      }
    }
    static constexpr std::string_view kKnown[] = {"mnist", "cifar-10", "cifar10", "cifar-100", "cifar100",
                                     "fashion-mnist", "fmnist", "svhn", "emnist", "femnist",
                                     "blobs", "moons"};
    for (const auto& tok : t_) {
      if (in(tok.low, kKnown)) {
        out_["dataset"] = tok.raw;
        return;
      }
    }
  }

  // -- comRounds / epoch ----------------------------------------------
  static constexpr std::string_view kCountAdjectives[] = {"local",       "communication", "comm",  "global",
                                             "training",    "federated",     "fl",    "total",
                                             "more",        "aggregation",   "server", "learning",
                                             "additional",  "full",          "train"};
  static constexpr std::string_view kCountFillers[] = {"of",    "to",    "as",   "=",     ":",      "is",    "be",
                                          "should", "set",  "at",   "equal", "equals", "the",   "a",
                                          "total", "number", "count", "will", "must",  "would", "are",
                                          "shall", "value", "it"};

  const char* count_key(std::string_view noun) const {
    if (in(noun, {"round", "rounds"})) return "comRounds";
    if (in(noun, {"epoch", "epochs"})) return "epoch";
    return nullptr;
  }

  void counts_before_noun() {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      const auto n = number_at(i);
      if (!n || !n->integer || n->percent || ends(i)) continue;
      const auto j = skip(i + 1, kCountAdjectives, 3);
      if (!j) continue;
      if (const char* key = count_key(low(*j))) set(key, as_json(*n));
    }
  }

  void counts_after_noun() {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      const char* key = count_key(low(i));
      if (!key || has(key) || ends(i)) continue;
      const auto j = skip(i + 1, kCountFillers, 4);
      if (!j) continue;
      const auto n = number_at(*j);
      if (n && n->integer && !n->percent) set(key, as_json(*n));
    }
  }

  // -- lr --------------------------------------------------------------
  static constexpr std::string_view kValueFillers[] = {"of",    "to",     "as",     "=",   ":",    "is",    "be",
                                          "should", "set",   "at",     "equal", "equals", "the", "a",
                                          "value", "around", "about",  "it",  "will", "must",  "use",
                                          "using", "with"};

  std::optional<std::size_t> lr_keyword_end(std::size_t i) const {
    if (in(low(i), {"lr", "learning-rate", "learning_rate", "learningrate"})) return i;
    if (low(i) == "learning" && low(i + 1) == "rate") return i + 1;
    if (low(i) == "step" && low(i + 1) == "size") return i + 1;
    return std::nullopt;
  }

  void learning_rate() {
    for (std::size_t i = 0; i < t_.size() && !has("lr"); ++i) {
      const auto k = lr_keyword_end(i);
      if (!k || ends(*k)) continue;
      const auto j = skip(*k + 1, kValueFillers, 4);
      if (!j) continue;
      if (const auto n = number_at(*j); n && !n->percent && !n->fraction) set("lr", n->value);
    }
    // "0.01 as the learning rate"
    for (std::size_t i = 0; i < t_.size() && !has("lr"); ++i) {
      const auto n = number_at(i);
      if (!n || n->percent || n->fraction || ends(i)) continue;
      const auto j = skip(i + 1, {"as", "the", "a", "for", "initial"}, 3);
      if (j && lr_keyword_end(*j)) set("lr", n->value);
    }
  }

  // -- minibatch / minibatchtest ----------------------------------------
  static constexpr std::string_view kTestWords[] = {"test", "testing", "evaluation", "eval", "validation",
                                       "inference", "test-time", "evaluating"};
  static constexpr std::string_view kTrainWords[] = {"training", "train", "local"};

  bool batch_keyword(std::size_t i) const {
    return in(low(i), {"batch", "batches", "minibatch", "minibatches", "mini-batch", "mini-batches",
                       "mini_batch", "batch-size", "batchsize", "batch_size", "minibatch-size",
                       "mini-batch-size", "minibatchtest"}) ||
           (low(i) == "mini" && in(low(i + 1), {"batch", "batches"}));
  }

  void assign_batch(bool test, const Number& n) {
    if (n.integer && !n.percent) set(test ? "minibatchtest" : "minibatch", as_json(n));
  }

  void batch_sizes() {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      if (!batch_keyword(i)) continue;
      bool test = low(i) == "minibatchtest";
      for (std::size_t b = 1; b <= 3 && b <= i; ++b) {
        if (ends(i - b)) break;
        if (in(low(i - b), kTestWords)) test = true;
      }
      std::size_t k = low(i) == "mini" ? i + 1 : i;
      if (ends(k)) continue;
      std::optional<std::size_t> at;
      for (std::size_t j = k + 1, n = 0; j < t_.size() && n < 7; ++j, ++n) {
        if (in(low(j), kTestWords)) {
          test = true;
        } else if (in(low(j), kTrainWords)) {
          test = false;
        } else if (number_at(j)) {
          at = j;
          break;
        } else if (!in(low(j), kValueFillers) && !in(low(j), {"size", "sizes", "for", "during", "in"})) {
          break;
        }
        if (ends(j)) break;
      }
      if (!at) continue;
      // "32 for training" / "64 for testing" trailing the number decide too.
      if (!ends(*at) && low(*at + 1) == "for") {
        if (in(low(*at + 2), kTestWords)) test = true;
        if (in(low(*at + 2), kTrainWords)) test = false;
      }
      assign_batch(test, *number_at(*at));
      // "... and 64 for testing"
      for (std::size_t j = *at + 1, n = 0; j + 2 < t_.size() && n < 6 && !ends(j - 1); ++j, ++n) {
        const auto m = number_at(j);
        if (!m || low(j + 1) != "for") continue;
        if (in(low(j + 2), kTestWords)) assign_batch(true, *m);
        if (in(low(j + 2), kTrainWords)) assign_batch(false, *m);
        break;
      }
    }
  }

  // -- clientFraction ---------------------------------------------------
  static constexpr std::string_view kClientNouns[] = {"clients", "client", "nodes", "node", "devices",
                                         "participants", "workers", "edge-nodes"};
  static constexpr std::string_view kOmitWords[] = {"omitting", "omit",     "excluding", "exclude", "except",
                                       "dropping", "drop",     "leaving",   "leave",   "skipping",
                                       "skip",     "without",  "ignoring",  "ignore",  "removing",
                                       "remove",   "excepting"};

  static double fraction_value(const Number& n) {
    if (n.percent || n.fraction) return tidy(n.numerator / n.denominator);
    return n.value;
  }

  void client_fraction() {
    // "client fraction of 0.7", "fraction of clients should be 70%"
    for (std::size_t i = 0; i < t_.size() && !has("clientFraction"); ++i) {
      if (!in(low(i), {"fraction", "client-fraction", "clientfraction", "client_fraction"}) || ends(i)) {
        continue;
      }
      const auto j = skip(i + 1, {"of", "clients", "client", "is", "be", "should", "to", "set", "=", ":",
                                  "as", "at", "the", "a", "around", "about", "equal", "participating",
                                  "involved", "used", "per", "round", "each", "in", "will", "must"},
                          7);
      if (!j) continue;
      if (const auto n = number_at(*j)) set("clientFraction", fraction_value(*n));
    }
    // "70% of the total clients", "7/10 of the clients", "2 out of 3 clients"
    for (std::size_t i = 0; i < t_.size() && !has("clientFraction"); ++i) {
      auto n = number_at(i);
      if (!n || ends(i)) continue;
      std::size_t next = i + 1;
      if (low(next) == "percent") ++next;
      if (low(next) == "per" && low(next + 1) == "cent") next += 2;
      if (!n->percent && !n->fraction && low(next) == "out" && low(next + 1) == "of") {
        const auto d = number_at(next + 2);
        if (!d || !d->integer || d->value <= 0 || ends(next + 1)) continue;
        Number f;
        f.fraction = true;
        f.numerator = n->value;
        f.denominator = d->value;
        f.value = n->value / d->value;
        n = f;
        next += 3;
      } else if (!n->percent && !n->fraction && !(n->value > 0.0 && n->value <= 1.0 && !n->integer)) {
        continue;
      }
      const auto j = skip(next, {"of", "the", "total", "all", "available", "registered", "participating",
                                 "connected", "edge", "total", "our", "my"},
                          5, next - 1);
      if (!j || !in(low(*j), kClientNouns)) continue;
      bool omit = false;
      for (std::size_t b = 1; b <= 3 && b <= i; ++b) {
        if (ends(i - b)) break;
        if (in(low(i - b), kOmitWords)) omit = true;
        if (low(i - b) == "out" && b >= 2 && low(i - b + 1) != "of" && in(low(i - b - 1), {"leaving", "leave"})) {
          omit = true;
        }
      }
      set("clientFraction", omit ? complement(*n) : fraction_value(*n));
    }
  }

  // -- compression ------------------------------------------------------
  void compression() {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      const auto w = low(i);
      const auto next = low(i + 1);
      const char* scheme = nullptr;
      if (in(w, {"quantize", "quantization", "quantized", "quantise", "quantisation", "quantised",
                 "quantizing", "int8", "8-bit"})) {
        scheme = "quantize";
      } else if (in(w, {"topk", "top-k", "top_k"}) || (w == "top" && next == "k")) {
        scheme = "topk";
      } else if (in(w, {"randk", "rand-k", "rand_k", "random-k", "randomk", "random_k"}) ||
                 (in(w, {"random", "rand"}) && next == "k")) {
        scheme = "randk";
      } else if ((in(w, {"no", "without", "disable", "disabled", "skip"}) &&
                  in(next, {"compression", "compressing", "compress"})) ||
                 in(w, {"uncompressed", "no-compression"})) {
        scheme = "No";
      } else if (in(w, {"compression", "compress"}) && !ends(i)) {
        const auto j = skip(i + 1, {":", "=", "is", "be", "should", "set", "to", "scheme", "the", "as"}, 4);
        if (j && in(low(*j), {"no", "none", "off", "disabled"})) scheme = "No";
      }
      if (scheme) {
        set("compress", scheme);
        return;
      }
    }
  }

  void compress_param() {
    if (!has("compress") || out_["compress"] == "No" || out_["compress"] == "quantize") return;
    for (std::size_t i = 0; i < t_.size() && !has("compressParam"); ++i) {
      const auto w = low(i);
      bool keyword = in(w, {"k", "topk", "top-k", "randk", "rand-k", "random-k", "sparsity", "density"});
      std::size_t k = i;
      if (w == "compression" && in(low(i + 1), {"ratio", "rate", "parameter", "fraction", "level", "param"})) {
        keyword = true;
        k = i + 1;
      }
      if (!keyword || ends(k)) continue;
      const auto j = skip(k + 1, {"=", ":", "of", "to", "is", "be", "set", "as", "with", "a", "the", "value",
                                  "parameter", "ratio", "fraction", "should", "equal", "at"},
                          5);
      if (!j) continue;
      const auto n = number_at(*j);
      if (n) set("compressParam", fraction_value(*n));
    }
    // "keeping 10% of the weights"
    for (std::size_t i = 0; i < t_.size() && !has("compressParam"); ++i) {
      const auto n = number_at(i);
      if (!n || !(n->percent || n->fraction) || ends(i)) continue;
      std::size_t next = i + 1;
      if (low(next) == "percent") ++next;
      const auto j = skip(next, {"of", "the", "all", "model", "largest", "top", "local"}, 4, next - 1);
      if (j && in(low(*j), {"weights", "parameters", "values", "entries", "coordinates", "gradients",
                           "elements", "params", "updates"})) {
        set("compressParam", fraction_value(*n));
      }
    }
  }

  // -- enum keywords ----------------------------------------------------
  void keywords() {
    for (std::size_t i = 0; i < t_.size(); ++i) {
      const auto w = low(i);
      const auto next = low(i + 1);

      if (in(w, {"adam"})) set("optimizer", "Adam");
      else if (in(w, {"sgd"}) || (w == "stochastic" && next == "gradient" && low(i + 2) == "descent")) {
        set("optimizer", "SGD");
      } else if (in(w, {"adagrad"})) set("optimizer", "AdaGrad");
      else if (in(w, {"rmsprop", "rms-prop"})) set("optimizer", "RMSProp");

      if (in(w, {"crossentropyloss", "cross-entropy", "crossentropy", "cross_entropy", "cross-entropy-loss"}) ||
          (w == "cross" && next == "entropy")) {
        set("loss", "CrossEntropyLoss");
      } else if (in(w, {"mse", "mseloss", "mse-loss"}) ||
                 (w == "mean" && next == "squared" && low(i + 2) == "error") ||
                 (w == "mean-squared" && next == "error")) {
        set("loss", "MSELoss");
      }

      if (in(w, {"round-robin", "round_robin", "roundrobin"}) || (w == "round" && next == "robin")) {
        set("scheduler", "round_robin");
      } else if (in(w, {"latency-proportional", "latency_proportional", "latency-based"}) ||
                 (w == "latency" && in(next, {"proportional", "based"})) ||
                 (w == "lowest" && next == "latency")) {
        set("scheduler", "latency_proportional");
      } else if (w == "random" && in(next, {"scheduler", "scheduling", "selection", "schedule", "client",
                                             "clients", "sampling"})) {
        set("scheduler", "random");
      } else if (w == "randomly" && (in(next, {"select", "selected", "selecting", "chosen", "choose",
                                               "sample", "sampled", "pick", "picked"}))) {
        set("scheduler", "random");
      } else if (w == "full" && in(next, {"scheduler", "scheduling", "participation", "schedule"})) {
        set("scheduler", "full");
      } else if (in(w, {"scheduler", "scheduling", "schedule"}) && !ends(i)) {
        const auto j = skip(i + 1, {":", "=", "is", "be", "should", "set", "to", "as", "the", "a", "policy",
                                    "type", "of", "use", "using", "mechanism"},
                            4);
        if (j) {
          const auto v = low(*j);
          if (v == "random") set("scheduler", "random");
          else if (v == "full") set("scheduler", "full");
        }
      }

      if (w == "classification") set("algo", "Classification");
      else if (w == "regression") set("algo", "Regression");
    }
  }

  std::vector<Token> t_;
  json out_ = json::object();
};

std::string join_shape(const std::vector<int>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s;
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

json fallback_parse(std::string_view text) {
  try {
    return Parser(text).run();
  } catch (const std::exception& e) {
    spdlog::warn("intent parser gave up: {}", e.what());
    return json::object();
  }
}

std::string_view to_string(Mode m) { return m == Mode::Remote ? "remote" : "fallback"; }

Translation translate_intent(std::string_view text, LlmBackend* backend) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(ErrorCode::UnrecognizedIntent, "", "empty intent");
  }
  if (backend == nullptr) {
    const json partial = fallback_parse(text);
    if (!partial.contains("dataset")) throw Error(ErrorCode::UnrecognizedIntent, "dataset", "no dataset named");
    return {config::apply_defaults(partial), Mode::Fallback};
  }

  const std::string raw = backend->complete_intent(std::string(kSystemPrompt), std::string(text));
  const json parsed = json::parse(raw, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) throw Error(ErrorCode::InvalidLlmOutput, "", raw);
  try {
    return {config::apply_defaults(parsed), Mode::Remote};
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidLlmOutput, e.subject(), std::string(to_string(e.code())) + ": " + raw);
  }
}

std::string build_arch_prompt(const config::DataConfig& d) {
  std::string task = "The task is a " + std::string(config::to_string(d.task)) + " task";
  if (d.task == config::Algo::Classification) task += " with " + std::to_string(d.numLabels) + " labels";
  return "Create a model architecture for the following task. " + task +
         ". The input data is a tensor of shape (" + join_shape(d.shape) + ") and has " +
         std::to_string(d.numDatapoints) +
         " datapoints altogether. Considering the above information, create a neural network "
         "architecture that could achieve good accuracy.";
}

std::string torch_input_form(const config::DataConfig& d) {
  return "torch.zeros((" + join_shape(d.shape) + "))";
}

std::string torch_output_form(const config::DataConfig& d) {
  return "torch.size((1," + std::to_string(d.output_dim()) + "))";
}

std::string initial_prompt(int models, const config::DataConfig& d) {
  std::string p =
      "You are an AI that strictly conforms to responses in Python. You are an assistant in providing CNN "
      "architectures as a search space for neural architecture search. I need help designing the optimal "
      "CNN architecture for a specific dataset. I plan to start with a variety of models and change the "
      "model architecture based on model performance. As the initial step, please provide {m} CNN "
      "architectures with varying width, depth, and layer types. The input data is in the form {in} and "
      "the output is in the form {out}. There are altogether {n} data points for training. When "
      "suggesting models give importance to the above factors to make the model complex accordingly. "
      "After you suggest a design, I will test its performance and provide feedback. Based on the "
      "results of previous experiments, we can collaborate to iterate and improve the design. Please "
      "avoid suggesting the same design again during this iterative process. Your responses should "
      "contain valid Python code only, with no additional comments, explanations, or dialogue. Provide "
      "the PyTorch models according to the given prompt. Important!! Output the solution as {m} "
      "different Python code bases. Start each code base with <Code> and end the code base with </Code> "
      "brackets. So there must be {m} brackets. Include PyTorch imports with `import torch', `from torch "
      "import nn', and `import torch.nn.functional as F'. Do not include model initialization code.";
  replace_all(p, "{m}", std::to_string(models));
  replace_all(p, "{in}", torch_input_form(d));
  replace_all(p, "{out}", torch_output_form(d));
  replace_all(p, "{n}", std::to_string(d.numDatapoints));
  return p;
}

std::string intermediate_prompt(int models, const config::DataConfig& d, const std::string& model,
                                double accuracyPercent) {
  std::string p =
      "By using provided model {model}, we achieved an accuracy of {acc}%. As previously Please recommend "
      "{m} new models that outperform prior architectures based on the above-mentioned experiments on "
      "neural architecture search. Take a step towards making the model more complex by adding more "
      "layers to the neural network and increasing the number of parameters in the model.  The output "
      "should be structured the same as in the previous case. As in the previous case, the input is in "
      "the form {in}, and the output is in the form {out}. Please make sure that all the dimensions are "
      "correct in the network and no error will arise";
  // Placeholders are substituted in a fixed order so a model description
  // that happens to contain "{m}" is left alone.
  replace_all(p, "{m}", std::to_string(models));
  replace_all(p, "{acc}", std::to_string(static_cast<long long>(std::lround(accuracyPercent))));
  replace_all(p, "{in}", torch_input_form(d));
  replace_all(p, "{out}", torch_output_form(d));
  replace_all(p, "{model}", model);
  return p;
}

std::string error_prompt(const config::DataConfig& d, const std::string& model, const std::string& error) {
  return "The suggested model " + model + " gives the following error " + error +
         ". Please suggest a new model architecture with similar parameter complexity that conforms with "
         "the dimensions of the input and output correctly to avoid the above error. The input is in the "
         "form " + torch_input_form(d) + " and output a tensor in the form " + torch_output_form(d);
}

nn::ModelSpec fallback_model(const config::DataConfig& d) {
  const double in = d.input_dim();
  const double out = d.output_dim();
  const int hidden = std::clamp(static_cast<int>(std::lround(4.0 * std::sqrt(in * out))), 16, 256);
  return nn::make_mlp(d.shape, {hidden}, d.output_dim());
}

nn::ModelSpec parse_architecture(const json& j, const config::DataConfig& d) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArchitecture, "", "architecture must be a JSON object");
  json spec = j;
  if (!spec.contains("inputShape")) spec["inputShape"] = d.shape;
  if (!spec.contains("outputDim")) spec["outputDim"] = d.output_dim();
  nn::ModelSpec m;
  try {
    m = spec.get<nn::ModelSpec>();
    m.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidArchitecture, "layers", e.what());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArchitecture, "layers", e.what());
  }
  if (m.input_dim() != d.input_dim()) {
    throw Error(ErrorCode::InvalidArchitecture, "inputShape",
                "model expects " + std::to_string(m.input_dim()) + " inputs, data has " +
                    std::to_string(d.input_dim()));
  }
  if (m.outputDim != d.output_dim() || m.layers.back().outDim != d.output_dim()) {
    throw Error(ErrorCode::InvalidArchitecture, "outputDim",
                "model produces " + std::to_string(m.layers.back().outDim) + " outputs, task needs " +
                    std::to_string(d.output_dim()));
  }
  static constexpr std::size_t kMaxParameters = 50'000'000;
  if (m.parameter_count() > kMaxParameters) {
    throw Error(ErrorCode::InvalidArchitecture, "layers", "model exceeds 50M parameters");
  }
  return m;
}

namespace {

const json& first_architecture(const json& response) {
  if (response.contains("models") && response["models"].is_array() && !response["models"].empty()) {
    return response["models"].front();
  }
  return response;
}

}  // namespace

nn::ModelSpec request_model_spec(const config::DataConfig& d, LlmBackend* backend) {
  if (backend == nullptr) return fallback_model(d);
  json response = backend->architecture(build_arch_prompt(d));
  try {
    return parse_architecture(first_architecture(response), d);
  } catch (const Error& e) {
    spdlog::warn("architecture rejected ({}); asking once more", e.what());
    response = backend->architecture(error_prompt(d, first_architecture(response).dump(), e.detail()));
    return parse_architecture(first_architecture(response), d);
  }
}

}  // namespace fedforge::intent
