#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlens/attribution.hpp"
#include "nlens/metrics.hpp"

namespace nlens {

// Copy of `weights` with each neuron's subkey row(s) and subvalue column
// zeroed. Rejects invalid or duplicate ids.
TransformerWeights mask_neurons(const TransformerWeights& weights, std::span<const NeuronId> ids);

// Copy with the head's slice of the output projection zeroed.
TransformerWeights mask_head(const TransformerWeights& weights, int layer, int head);

struct IneParams {
  size_t n_per_role = 50;
  size_t budget = 50;
  // Largest tolerated probe accuracy drop, in percentage points.
  double capability_drop_threshold = 1.0;
  size_t bias_sample_size = 200;
  // Candidates must reduce the bias metric by strictly more than this.
  double min_bias_reduction = 0.0;
  uint64_t seed = 0;

  friend bool operator==(const IneParams&, const IneParams&) = default;
};

struct Candidate {
  NeuronId id;
  NeuronRole source = NeuronRole::kFfnValue;
  double importance = 0.0;
  int dominant_position = 0;
  double start_share = 0.0;
  bool evaluated = false;
  double bias_delta = 0.0;        // baseline - masked mean |entropy difference|; positive = less bias
  double capability_delta = 0.0;  // masked - baseline probe accuracy, points
  bool filtered = false;
  std::string reason;  // why filtered or not selected
  bool selected = false;
  int rank = -1;  // position in the selection, -1 if not selected

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct EditPlan {
  int version = 1;
  std::string model_hash;
  IneParams params;
  double baseline_bias = 0.0;
  double baseline_accuracy = 0.0;
  std::vector<Candidate> candidates;  // canonical neuron order
  std::vector<NeuronId> neurons;      // selected, best first

  // Throws InputError when the plan breaks its invariants.
  void validate() const;
  friend bool operator==(const EditPlan&, const EditPlan&) = default;
};

// Filter reasons recorded on candidates.
inline constexpr const char* kReasonStart = "start-position";
inline constexpr const char* kReasonCapability = "capability-drop";
inline constexpr const char* kReasonNoReduction = "no-bias-reduction";
inline constexpr const char* kReasonBudget = "over-budget";

// Deterministic subsample of at most n pairs (seeded shuffle, original order kept).
std::vector<PairedCase> sample_pairs(const std::vector<PairedCase>& pairs, size_t n, uint64_t seed);

// Identify value/query candidates on `commonwords`, drop those whose dominant
// position is the first token, then mask each survivor alone and keep the
// ones that reduce bias without costing probe accuracy.
EditPlan ine_select(const TransformerWeights& weights, const Tokenizer& tokenizer,
                    const std::vector<PairedCase>& commonwords, const std::vector<TaskCase>& capability_probe,
                    const IneParams& params);

TransformerWeights apply_plan(const TransformerWeights& weights, const EditPlan& plan);

struct CnaRow {
  NeuronId neuron;
  float coef_before = 0.0f;
  float coef_after = 0.0f;
  ProjectionReport projection;
};

// Final-position coefficients of the watched neurons before and after masking.
std::vector<CnaRow> cna_compare(const TransformerWeights& weights, std::span<const NeuronId> mask_ids,
                                std::span<const TokenId> prompt, std::span<const NeuronId> watch_ids);

}  // namespace nlens
