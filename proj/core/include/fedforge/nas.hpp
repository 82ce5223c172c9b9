#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedforge/config.hpp"
#include "fedforge/llm_gateway.hpp"
#include "fedforge/model_spec.hpp"
#include "fedforge/nn.hpp"
#include "fedforge/scheduling.hpp"

namespace fedforge::nas {

inline constexpr double kLrLow = 1e-5;
inline constexpr double kLrHigh = 5e-2;

struct SearchConfig {
  int searchRounds = 5;       // X
  int hpoRounds = 2;          // H
  int epochs = 20;            // E, explorer epochs per candidate
  double clientFraction = 1.0;
  int candidates = 20;        // Y, learning rates per HPO round
  int initialBatch = 250;     // B0, training points sampled in the first halving step
  double lrLow = kLrLow;
  double lrHigh = kLrHigh;
  int minibatch = 16;         // SGD mini-batch inside each candidate's training
  double validationFraction = 0.2;
  std::uint64_t seed = 0;

  /// Throws ValueOutOfRange.
  void validate() const;
};

nlohmann::json to_json(const SearchConfig& c);
SearchConfig search_config_from_json(const nlohmann::json& j);

struct CandidateResult {
  nn::ModelSpec model;
  double lr = 0.0;
  double perf = 0.0;  // validation score in [0,1]
};

nlohmann::json to_json(const CandidateResult& c);
/// Throws InvalidArchitecture or ValueOutOfRange.
CandidateResult candidate_from_json(const nlohmann::json& j);

/// Y learning rates drawn log-uniformly from [low, high], sorted descending.
std::vector<double> create_hpo_space(int count, std::uint64_t seed, double low = kLrLow, double high = kLrHigh);

/// Seeded split of a client's local data.
struct TrainValSplit {
  nn::Dataset train;
  nn::Dataset validation;
};
TrainValSplit split_validation(const nn::Dataset& data, double validationFraction, std::uint64_t seed);

/// Validation score used to rank candidates: accuracy for classification,
/// 1/(1+loss) for regression.
double score(const nn::FlatWeights& w, const nn::Dataset& validation);

struct HpoIteration {
  std::size_t batch = 0;  // B, training points sampled this iteration
  std::vector<double> lrs;
  std::vector<double> perfs;  // aligned with lrs
};

struct HpoResult {
  double bestLr = 0.0;
  double bestPerf = 0.0;
  std::vector<HpoIteration> trace;
};

struct HpoSettings {
  int epochs = 20;
  int initialBatch = 250;
  int minibatch = 16;
};

/// Selective halving over learning rates. Each iteration trains a fresh
/// copy of `model` per lr on B sampled training points and scores it on the
/// validation split; survivors are the top ceil(|O|/2) with ties to the
/// larger lr, and B doubles up to the training-set size. Candidates whose
/// training diverges are dropped; DivergentCandidate when none remain.
HpoResult perform_hpo(const nn::ModelSpec& model, std::vector<double> lrs, const HpoSettings& settings,
                      const TrainValSplit& data, std::uint64_t seed);

/// A client's whole exploration of one architecture: H rounds of
/// create_hpo_space + perform_hpo, best round kept.
CandidateResult explore(const nn::ModelSpec& model, const SearchConfig& cfg, const nn::Dataset& local,
                        std::uint64_t seed);

/// What the previous search round learned, for steering the next one.
struct Feedback {
  nn::ModelSpec model;
  double perf = 0.0;
};

class SearchSpaceProvider {
 public:
  virtual ~SearchSpaceProvider() = default;
  /// `count` valid, previously unissued architectures for `d`.
  virtual std::vector<nn::ModelSpec> create(int count, const config::DataConfig& d, int round,
                                            const std::optional<Feedback>& feedback) = 0;
};

/// Dense families: 1 to 3 hidden layers of width 32..256, uniform and
/// tapered. Never issues the same spec twice; SearchSpaceExhausted after that.
class BuiltinProvider : public SearchSpaceProvider {
 public:
  explicit BuiltinProvider(std::uint64_t seed = 0) : seed_(seed) {}
  std::vector<nn::ModelSpec> create(int count, const config::DataConfig& d, int round,
                                    const std::optional<Feedback>& feedback) override;

  static std::vector<std::vector<int>> hidden_layouts();

 private:
  std::uint64_t seed_;
  std::set<std::vector<int>> issued_;
};

/// Sends the search prompts to an LLM backend and validates every answer,
/// replacing invalid ones through a single error prompt each. Falls back to
/// the builtin provider when the backend cannot be reached.
class GatewayProvider : public SearchSpaceProvider {
 public:
  GatewayProvider(intent::LlmBackend& backend, std::uint64_t seed = 0) : backend_(backend), builtin_(seed) {}
  std::vector<nn::ModelSpec> create(int count, const config::DataConfig& d, int round,
                                    const std::optional<Feedback>& feedback) override;

  /// Every prompt sent so far, in order.
  const std::vector<std::string>& prompts() const { return prompts_; }

 private:
  intent::LlmBackend& backend_;
  BuiltinProvider builtin_;
  std::vector<std::string> prompts_;
  std::set<std::string> issued_;
};

/// One search-round job for one client.
struct Assignment {
  std::string clientId;
  nn::ModelSpec model;
  std::uint64_t seed = 0;
};

/// Runs client explorations. Failed clients are absent from the result.
class SearchTransport {
 public:
  virtual ~SearchTransport() = default;
  virtual std::vector<std::pair<std::string, CandidateResult>> explore(const std::vector<Assignment>& jobs,
                                                                        const SearchConfig& cfg) = 0;
};

/// Explores on datasets held in this process.
class LocalSearchTransport : public SearchTransport {
 public:
  void add_client(std::string id, nn::Dataset data);
  std::vector<std::pair<std::string, CandidateResult>> explore(const std::vector<Assignment>& jobs,
                                                                const SearchConfig& cfg) override;
  sched::ClientRoster roster() const;

 private:
  std::vector<std::pair<std::string, nn::Dataset>> clients_;
};

struct SearchRound {
  int round = 0;
  std::vector<std::pair<std::string, CandidateResult>> results;
  CandidateResult best;
};

struct SearchResult {
  nn::ModelSpec model;
  double lr = 0.0;
  double perf = 0.0;
  std::vector<SearchRound> rounds;
};

/// Federated architecture and learning-rate search. Throws
/// NoClientsAvailable or AllModelsInvalid(round).
SearchResult run_search(const SearchConfig& cfg, const config::DataConfig& d, const sched::ClientRoster& roster,
                        SearchSpaceProvider& provider, SearchTransport& transport);

nlohmann::json to_json(const SearchResult& r);

}  // namespace fedforge::nas
