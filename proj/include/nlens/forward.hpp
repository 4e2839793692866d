#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "nlens/tokenizer.hpp"
#include "nlens/weights.hpp"

namespace nlens {

// Everything one layer added to the residual stream, for every position.
// attn_out and ffn_out are the terms actually added after their norms, so
// residual[l + 1] == residual[l] + attn_out + ffn_out holds by construction.
struct LayerTrace {
  Mat attn_in;                  // norm(h^{l-1}), T x d
  std::vector<Mat> attn_probs;  // per head, T x T, row = query position
  Mat attn_out;                 // A^l, T x d
  Mat ffn_in;                   // norm(h^{l-1} + A^l), T x d
  Mat coefficients;             // m^l, T x d_ffn
  Mat ffn_out;                  // F^l, T x d
};

struct InferenceTrace {
  std::vector<TokenId> tokens;
  std::vector<Mat> residual;  // n_layers + 1 entries; [0] is the embedding, [l+1] is h^l
  std::vector<LayerTrace> layers;
  Vec logits;  // final position, before softmax
  Vec probs;   // final position distribution

  int length() const { return static_cast<int>(tokens.size()); }
  int last() const { return length() - 1; }
};

// One neuron's additive contribution from one source position.
struct PositionedContribution {
  NeuronId neuron;
  int position = 0;
  Vec vector;
  float coefficient = 0.0f;
};

InferenceTrace forward(const TransformerWeights& weights, std::span<const TokenId> tokens);

// log p(x_t | x_<t) for t = 1 .. T-1.
std::vector<double> next_token_logprobs(const TransformerWeights& weights, std::span<const TokenId> tokens);

// Greedy continuation of `prompt` by `n_tokens` tokens.
std::vector<TokenId> greedy_generate(const TransformerWeights& weights, std::span<const TokenId> prompt,
                                     int n_tokens);

// Final norm applied to an arbitrary residual-space vector.
Vec apply_final_norm(const TransformerWeights& weights, const Vec& v);
// Unembedding logits of final_norm(v).
Vec logits_of(const TransformerWeights& weights, const Vec& v);
Vec log_softmax(const Vec& logits);
Vec softmax(const Vec& logits);

// m^l for every position and neuron (T x d_ffn).
const Mat& ffn_coefficients(const InferenceTrace& trace, int layer);

// FFN neuron contributions m_{i,k} * fc2_k at one position.
std::vector<PositionedContribution> ffn_neuron_contributions(const TransformerWeights& weights,
                                                             const InferenceTrace& trace, int layer, int position);

// Per-head value-path activations (subkey . attn_in_p + bias), T x d_head.
Mat head_values(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head);

// Contributions of every neuron of one head, from every source position, to
// the head output at `position`. The coefficient is alpha * value activation.
std::vector<PositionedContribution> attn_neuron_contributions(const TransformerWeights& weights,
                                                              const InferenceTrace& trace, int layer, int head,
                                                              int position);

// Per-neuron coefficient and vector summed over source positions.
struct NeuronContribution {
  float coefficient = 0.0f;
  Vec vector;
};
NeuronContribution neuron_contribution(const TransformerWeights& weights, const InferenceTrace& trace,
                                       const NeuronId& id, int position);

// A single head's output (without the output bias) at `position`.
Vec head_output(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head, int position);

// Negative log-likelihood of text after its first token, divided by the
// number of unicode scalar values in the text.
double char_normalized_entropy(const TransformerWeights& weights, const Tokenizer& tokenizer, std::string_view text);

size_t utf8_length(std::string_view text);

}  // namespace nlens
