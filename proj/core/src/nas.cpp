#include "fedforge/nas.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <spdlog/spdlog.h>

#include "fedforge/error.hpp"
#include "fedforge/intent.hpp"
#include "fedforge/seed.hpp"

namespace fedforge::nas {

using nlohmann::json;

namespace {

/// Uniform in [0,1) from the top 53 bits; identical across standard libraries.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

config::Loss loss_for(const config::DataConfig& d) {
  return d.task == config::Algo::Classification ? config::Loss::CrossEntropy : config::Loss::MSE;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace

void SearchConfig::validate() const {
  auto fail = [](const char* key, const char* why) { throw Error(ErrorCode::ValueOutOfRange, key, why); };
  if (searchRounds < 1) fail("searchRounds", "must be >= 1");
  if (hpoRounds < 1) fail("hpoRounds", "must be >= 1");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (candidates < 1) fail("candidates", "must be >= 1");
  if (initialBatch < 1) fail("initialBatch", "must be >= 1");
  if (minibatch < 1) fail("minibatch", "must be >= 1");
  if (!(clientFraction > 0.0 && clientFraction <= 1.0)) fail("clientFraction", "must be in (0,1]");
  if (!(lrLow > 0.0 && lrLow < lrHigh)) fail("lrLow", "need 0 < low < high");
  if (!(validationFraction > 0.0 && validationFraction < 1.0)) fail("validationFraction", "must be in (0,1)");
}

json to_json(const SearchConfig& c) {
  return {{"searchRounds", c.searchRounds}, {"hpoRounds", c.hpoRounds},
          {"epochs", c.epochs},             {"clientFraction", c.clientFraction},
          {"candidates", c.candidates},     {"initialBatch", c.initialBatch},
          {"lrLow", c.lrLow},               {"lrHigh", c.lrHigh},
          {"minibatch", c.minibatch},       {"validationFraction", c.validationFraction},
          {"seed", c.seed}};
}

SearchConfig search_config_from_json(const json& j) {
  SearchConfig c;
  if (!j.is_object()) throw Error(ErrorCode::MalformedJson, "search", "expected an object");
  try {
    c.searchRounds = j.value("searchRounds", c.searchRounds);
    c.hpoRounds = j.value("hpoRounds", c.hpoRounds);
    c.epochs = j.value("epochs", c.epochs);
    c.clientFraction = j.value("clientFraction", c.clientFraction);
    c.candidates = j.value("candidates", c.candidates);
    c.initialBatch = j.value("initialBatch", c.initialBatch);
    c.lrLow = j.value("lrLow", c.lrLow);
    c.lrHigh = j.value("lrHigh", c.lrHigh);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.validationFraction = j.value("validationFraction", c.validationFraction);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValueOutOfRange, "search", e.what());
  }
  c.validate();
  return c;
}

json to_json(const CandidateResult& c) { return {{"model", c.model}, {"lr", c.lr}, {"perf", c.perf}}; }

CandidateResult candidate_from_json(const json& j) {
  CandidateResult c;
  try {
    c.model = j.at("model").get<nn::ModelSpec>();
    c.lr = j.at("lr").get<double>();
    c.perf = j.at("perf").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ValueOutOfRange, "candidate", e.what());
  }
  c.model.validate();
  if (!(c.perf >= 0.0 && c.perf <= 1.0) || !(c.lr > 0.0)) {
    throw Error(ErrorCode::ValueOutOfRange, "candidate", "perf must be in [0,1] and lr > 0");
  }
  return c;
}

std::vector<double> create_hpo_space(int count, std::uint64_t seed, double low, double high) {
  if (count < 1) throw Error(ErrorCode::ValueOutOfRange, "candidates", "must be >= 1");
  if (!(low > 0.0 && low < high)) throw Error(ErrorCode::ValueOutOfRange, "lrBounds", "need 0 < low < high");
  std::mt19937_64 rng(mix_seed(seed));
  const double a = std::log(low);
  const double b = std::log(high);
  std::vector<double> out(static_cast<std::size_t>(count));
  for (auto& v : out) v = std::clamp(std::exp(a + (b - a) * unit(rng)), low, high);
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

TrainValSplit split_validation(const nn::Dataset& data, double validationFraction, std::uint64_t seed) {
  const std::size_t n = data.rows();
  if (n < 2) throw Error(ErrorCode::EmptyInput, "dataset", "need at least two rows to hold out validation");
  auto nVal = static_cast<std::size_t>(std::llround(static_cast<double>(n) * validationFraction));
  nVal = std::clamp<std::size_t>(nVal, 1, n - 1);
  const auto idx = shuffled(n, seed);
  const std::span<const std::size_t> all(idx);
  return {data.subset(all.subspan(nVal)), data.subset(all.first(nVal))};
}

double score(const nn::FlatWeights& w, const nn::Dataset& validation) {
  const auto m = nn::evaluate(w, validation, 256, loss_for(validation.config));
  if (validation.config.task == config::Algo::Classification) return m.accuracy;
  return std::isfinite(m.loss) ? 1.0 / (1.0 + m.loss) : 0.0;
}

HpoResult perform_hpo(const nn::ModelSpec& model, std::vector<double> lrs, const HpoSettings& settings,
                      const TrainValSplit& data, std::uint64_t seed) {
  if (lrs.empty()) throw Error(ErrorCode::ValueOutOfRange, "lrs", "need at least one learning rate");
  model.validate();
  const std::size_t trainSize = data.train.rows();
  if (trainSize == 0) throw Error(ErrorCode::EmptyInput, "train", "no training rows");
  std::sort(lrs.begin(), lrs.end(), std::greater<>());

  HpoResult result;
  result.bestLr = lrs.front();
  double best = -std::numeric_limits<double>::infinity();
  std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(std::max(settings.initialBatch, 1)), trainSize);
  std::vector<double> perfs;

  auto run_iteration = [&](std::size_t iteration) {
    const auto order = shuffled(trainSize, mix_seed(seed, 2 * iteration));
    const auto sample = data.train.subset(std::span<const std::size_t>(order).first(batch));
    const auto init = nn::build_model(model, mix_seed(seed, 2 * iteration + 1));

    HpoIteration it;
    it.batch = batch;
    std::vector<double> kept;
    perfs.clear();
    for (double lr : lrs) {
      nn::TrainSettings s;
      s.epochs = settings.epochs;
      s.batchSize = settings.minibatch;
      s.lr = lr;
      s.optimizer = config::Optimizer::Adam;
      s.loss = loss_for(data.train.config);
      double p = 0.0;
      try {
        p = score(nn::train(init, sample, s, mix_seed(seed, iteration)), data.validation);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss) throw;
        spdlog::debug("lr {} diverged, dropping it", lr);
        continue;
      }
      it.lrs.push_back(lr);
      it.perfs.push_back(p);
      kept.push_back(lr);
      perfs.push_back(p);
      if (p > best) {
        best = p;
        result.bestLr = lr;
      }
    }
    result.trace.push_back(std::move(it));
    lrs = std::move(kept);
    if (lrs.empty()) throw Error(ErrorCode::DivergentCandidate, "iteration " + std::to_string(iteration));
  };

  if (lrs.size() == 1) {
    run_iteration(0);
  } else {
    for (std::size_t iteration = 0; lrs.size() > 1; ++iteration) {
      if (iteration != 0) {
        // lrs is in descending order, so a stable sort by perf breaks ties toward larger lr.
        std::vector<std::size_t> rank(lrs.size());
        std::iota(rank.begin(), rank.end(), std::size_t{0});
        std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return perfs[a] > perfs[b]; });
        rank.resize((lrs.size() + 1) / 2);
        std::sort(rank.begin(), rank.end());
        std::vector<double> survivors;
        for (std::size_t r : rank) survivors.push_back(lrs[r]);
        lrs = std::move(survivors);
        batch = std::min(batch * 2, trainSize);
      }
      run_iteration(iteration);
    }
  }
  result.bestPerf = best;
  return result;
}

CandidateResult explore(const nn::ModelSpec& model, const SearchConfig& cfg, const nn::Dataset& local,
                        std::uint64_t seed) {
  cfg.validate();
  const auto split = split_validation(local, cfg.validationFraction, seed);
  HpoSettings settings{cfg.epochs, cfg.initialBatch, cfg.minibatch};
  CandidateResult best{model, 0.0, -1.0};
  for (int j = 1; j <= cfg.hpoRounds; ++j) {
    const auto space = create_hpo_space(cfg.candidates, mix_seed(seed, static_cast<std::uint64_t>(j)), cfg.lrLow,
                                        cfg.lrHigh);
    const auto r = perform_hpo(model, space, settings, split, mix_seed(seed, 1000u + static_cast<std::uint64_t>(j)));
    if (r.bestPerf > best.perf) {
      best.lr = r.bestLr;
      best.perf = r.bestPerf;
    }
  }
  return best;
}

// ------------------------------------------------------------ providers

std::vector<std::vector<int>> BuiltinProvider::hidden_layouts() {
  std::vector<std::vector<int>> out;
  for (int depth = 1; depth <= 3; ++depth) {
    for (int width : {32, 64, 128, 256}) out.emplace_back(static_cast<std::size_t>(depth), width);
  }
  for (std::vector<int> v : std::initializer_list<std::vector<int>>{
           {64, 32}, {128, 64}, {256, 128}, {256, 64}, {128, 32}, {128, 64, 32}, {256, 128, 64}, {256, 128, 32}}) {
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<nn::ModelSpec> BuiltinProvider::create(int count, const config::DataConfig& d, int round,
                                                   const std::optional<Feedback>& feedback) {
  std::vector<std::vector<int>> pool;
  for (auto& h : hidden_layouts()) {
    if (!issued_.contains(h)) pool.push_back(std::move(h));
  }
  auto spec_of = [&](const std::vector<int>& h) { return nn::make_mlp(d.shape, h, d.output_dim()); };

  std::vector<nn::ModelSpec> out;
  for (int slot = 0; slot < count; ++slot) {
    if (pool.empty()) throw Error(ErrorCode::SearchSpaceExhausted, "round " + std::to_string(round));
    // After feedback, prefer designs larger than the best one so far.
    std::vector<std::size_t> preferred;
    if (feedback) {
      const auto floor = feedback->model.parameter_count();
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (spec_of(pool[i]).parameter_count() > floor) preferred.push_back(i);
      }
    }
    if (preferred.empty()) {
      preferred.resize(pool.size());
      std::iota(preferred.begin(), preferred.end(), std::size_t{0});
    }
    const std::uint64_t r = mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(round)), static_cast<std::uint64_t>(slot));
    const std::size_t pick = preferred[r % preferred.size()];
    issued_.insert(pool[pick]);
    out.push_back(spec_of(pool[pick]));
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return out;
}

namespace {

std::vector<json> architectures(const json& response) {
  if (response.contains("models") && response["models"].is_array()) {
    return {response["models"].begin(), response["models"].end()};
  }
  return {response};
}

}  // namespace

std::vector<nn::ModelSpec> GatewayProvider::create(int count, const config::DataConfig& d, int round,
                                                   const std::optional<Feedback>& feedback) {
  const std::string prompt =
      feedback ? intent::intermediate_prompt(count, d, json(feedback->model).dump(), feedback->perf * 100.0)
               : intent::initial_prompt(count, d);
  prompts_.push_back(prompt);
  json response;
  try {
    response = backend_.architecture(prompt);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::GatewayUnreachable) throw;
    spdlog::warn("search space gateway unreachable ({}); using builtin designs", e.what());
    return builtin_.create(count, d, round, feedback);
  }

  std::vector<nn::ModelSpec> out;
  auto accept = [&](const json& candidate) {
    auto spec = intent::parse_architecture(candidate, d);
    const std::string key = json(spec).dump();
    if (issued_.contains(key)) throw Error(ErrorCode::InvalidArchitecture, "layers", "same design as an earlier one");
    issued_.insert(key);
    out.push_back(std::move(spec));
  };
  for (const auto& candidate : architectures(response)) {
    if (static_cast<int>(out.size()) >= count) break;
    try {
      accept(candidate);
    } catch (const Error& first) {
      if (first.code() != ErrorCode::InvalidArchitecture) throw;
      const std::string retry = intent::error_prompt(d, candidate.dump(), first.detail());
      prompts_.push_back(retry);
      try {
        accept(architectures(backend_.architecture(retry)).front());
      } catch (const Error& second) {
        spdlog::warn("round {}: dropping invalid architecture: {}", round, second.what());
      }
    }
  }
  if (out.empty()) throw Error(ErrorCode::AllModelsInvalid, "round " + std::to_string(round));
  if (static_cast<int>(out.size()) < count) {
    spdlog::warn("round {}: gateway gave {} of {} designs, filling from builtin", round, out.size(), count);
    for (auto& s : builtin_.create(count - static_cast<int>(out.size()), d, round, feedback)) out.push_back(std::move(s));
  }
  return out;
}

// ------------------------------------------------------------ search loop

void LocalSearchTransport::add_client(std::string id, nn::Dataset data) {
  clients_.emplace_back(std::move(id), std::move(data));
}

sched::ClientRoster LocalSearchTransport::roster() const {
  sched::ClientRoster r;
  for (const auto& [id, _] : clients_) r.add_client(id);
  return r;
}

std::vector<std::pair<std::string, CandidateResult>> LocalSearchTransport::explore(const std::vector<Assignment>& jobs,
                                                                                   const SearchConfig& cfg) {
  std::vector<std::pair<std::string, CandidateResult>> out;
  for (const auto& job : jobs) {
    const auto it = std::find_if(clients_.begin(), clients_.end(), [&](const auto& c) { return c.first == job.clientId; });
    if (it == clients_.end()) continue;
    try {
      out.emplace_back(job.clientId, nas::explore(job.model, cfg, it->second, job.seed));
    } catch (const Error& e) {
      spdlog::warn("client {} failed exploration: {}", job.clientId, e.what());
    }
  }
  return out;
}

SearchResult run_search(const SearchConfig& cfg, const config::DataConfig& d, const sched::ClientRoster& roster,
                        SearchSpaceProvider& provider, SearchTransport& transport) {
  cfg.validate();
  d.validate();
  if (roster.empty()) throw Error(ErrorCode::NoClientsAvailable, "search");
  sched::ClientRoster clients = roster;

  SearchResult result;
  result.perf = -1.0;
  std::optional<Feedback> feedback;
  for (int t = 1; t <= cfg.searchRounds; ++t) {
    const int m = sched::participant_count(cfg.clientFraction, static_cast<int>(clients.size()));
    const auto specs = provider.create(m, d, t, feedback);
    const auto ids = sched::select_clients(clients, config::Scheduler::Random, m, t, cfg.seed);

    std::vector<Assignment> jobs;
    for (std::size_t k = 0; k < ids.size() && k < specs.size(); ++k) {
      jobs.push_back({ids[k], specs[k], mix_seed(cfg.seed, static_cast<std::uint64_t>(t) * 1000u + k)});
    }
    SearchRound sr;
    sr.round = t;
    sr.results = transport.explore(jobs, cfg);
    std::sort(sr.results.begin(), sr.results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    if (sr.results.empty()) throw Error(ErrorCode::AllModelsInvalid, "round " + std::to_string(t));

    sr.best = sr.results.front().second;
    for (const auto& [_, c] : sr.results) {
      if (c.perf > sr.best.perf) sr.best = c;
    }
    spdlog::info("search round {}: best perf {:.4f} lr {:.3g} ({} layers)", t, sr.best.perf, sr.best.lr,
                 sr.best.model.layers.size());
    feedback = Feedback{sr.best.model, sr.best.perf};
    if (sr.best.perf > result.perf) {
      result.model = sr.best.model;
      result.lr = sr.best.lr;
      result.perf = sr.best.perf;
    }
    result.rounds.push_back(std::move(sr));
  }
  return result;
}

json to_json(const SearchResult& r) {
  json rounds = json::array();
  for (const auto& sr : r.rounds) {
    json results = json::array();
    for (const auto& [id, c] : sr.results) {
      json e = to_json(c);
      e["client"] = id;
      results.push_back(std::move(e));
    }
    rounds.push_back({{"round", sr.round}, {"best", to_json(sr.best)}, {"results", std::move(results)}});
  }
  return {{"model", r.model}, {"lr", r.lr}, {"perf", r.perf}, {"rounds", std::move(rounds)}};
}

}  // namespace fedforge::nas
