#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nlens/datasets.hpp"
#include "nlens/forward.hpp"

namespace nlens {

struct TokenProb {
  TokenId token = 0;
  float prob = 0.0f;
};

// Logit-lens view of a vector: top tokens by descending probability and
// last tokens by ascending probability.
struct ProjectionReport {
  std::vector<TokenProb> top;
  std::vector<TokenProb> last;
};

inline constexpr int kDefaultTopTokens = 10;

ProjectionReport unembed_project(const TransformerWeights& weights, const Vec& vector, int n_top = kDefaultTopTokens);

enum class NeuronRole { kFfnValue, kAttnValue, kFfnQuery };
std::string to_string(NeuronRole role);
NeuronRole parse_role(const std::string& s);

struct NeuronReport {
  NeuronId id;
  NeuronRole role = NeuronRole::kFfnValue;
  double importance = 0.0;   // value roles
  double query_score = 0.0;  // ffn-query role
  float coefficient = 0.0f;  // at the final position (value) or dominant position (query)
  int dominant_position = 0;
  double start_share = 0.0;  // share of cases whose dominant position is 0
  ProjectionReport projection;
};

struct HeadReport {
  int layer = 0;
  int head = 0;
  double logit_score = 0.0;
  double causal_score = 0.0;
};

// log p(w | coef*fc2_k + A^l + h^{l-1}) - log p(w | A^l + h^{l-1}) at the final position.
double ffn_value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                            TokenId target);
// log p(w | v_A + h^{l-1}) - log p(w | h^{l-1}), v_A the neuron's alpha-weighted output.
double attn_value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                             TokenId target);
double value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                        TokenId target);

// Importance of every neuron, indexed like all_neurons(config).
std::vector<double> all_value_importances(const TransformerWeights& weights, const InferenceTrace& trace,
                                          TokenId target);

// FFN: argmax_i |m_{i,k}|. Attention: argmax_p alpha_{T,p} * |value activation_p|.
// Ties go to the earliest position.
int dominant_position(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron);

struct ValueNeurons {
  std::vector<NeuronReport> ffn;
  std::vector<NeuronReport> attn;
};

ValueNeurons top_value_neurons(const TransformerWeights& weights, const InferenceTrace& trace, TokenId target,
                               size_t n);

// Score of each FFN neuron against the given attention value neurons:
// sum over value neurons in later layers of (m_{p,k} fc2_k) . subkey, with p
// the FFN neuron's dominant position. Ranked by |score|, top n.
std::vector<NeuronReport> query_neuron_scores(const TransformerWeights& weights, const InferenceTrace& trace,
                                              const std::vector<NeuronId>& attn_value_neurons, size_t n);
// Raw scores for every FFN neuron, indexed layer * d_ffn + k.
std::vector<double> all_query_scores(const TransformerWeights& weights, const InferenceTrace& trace,
                                     const std::vector<NeuronId>& attn_value_neurons);

double head_logit_score(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head,
                        TokenId target);

// Mean absolute entropy difference of the original minus the head-masked model.
double head_causal_score(const TransformerWeights& weights, const Tokenizer& tokenizer,
                         const std::vector<PairedCase>& dataset, int layer, int head);

struct AnalysisCase {
  std::string prompt;
  TokenId target = 0;
};

// One case per pair: the text before the gender slot, targeting whichever
// gender word the model currently prefers there (male on ties).
std::vector<AnalysisCase> analysis_cases(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                         const std::vector<PairedCase>& pairs);

struct AggregateImportance {
  std::vector<NeuronReport> ffn_value;
  std::vector<NeuronReport> attn_value;
  std::vector<NeuronReport> ffn_query;
};

// Mean per-case importance, top n per role. Query scores are averaged in
// absolute value against the aggregated attention value neurons.
AggregateImportance aggregate_importance(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                         const std::vector<AnalysisCase>& cases, size_t n);

// Top-K neurons by mean pooled importance; fraction = mean over those K of the
// share of cases ranking the neuron in their own top M.
std::vector<std::pair<int, double>> neuron_frequency(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                                     const std::vector<AnalysisCase>& cases,
                                                     const std::vector<int>& ks, int m);

struct HeadGrid {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<double> scores;  // row-major layer x head

  double at(int layer, int head) const { return scores[static_cast<size_t>(layer * n_heads + head)]; }
  // (layer, head) pairs sorted by descending score, ties by (layer, head).
  std::vector<std::pair<int, int>> top(size_t n) const;
};

HeadGrid head_logit_grid(const TransformerWeights& weights, const Tokenizer& tokenizer,
                         const std::vector<AnalysisCase>& cases);
HeadGrid head_causal_grid(const TransformerWeights& weights, const Tokenizer& tokenizer,
                          const std::vector<PairedCase>& pairs);

}  // namespace nlens
