#pragma once

#include <random>
#include <string>
#include <vector>

#include "nlens/datasets.hpp"
#include "nlens/editing.hpp"
#include "nlens/tokenizer.hpp"
#include "nlens/weights.hpp"

namespace fixtures {

using namespace nlens;

ModelConfig tiny_config(FfnFamily ffn = FfnFamily::kSingleGate, NormFamily norm = NormFamily::kLayerNorm,
                        PositionFamily pos = PositionFamily::kLearned);

// Random architecture: 2-4 layers, d_model <= 128, any family mix.
ModelConfig random_config(std::mt19937_64& rng);
std::vector<TokenId> random_prompt(std::mt19937_64& rng, int vocab, int length);

// Byte-level tokenizer where every word, bare and with a leading space, is one token.
Tokenizer word_tokenizer(const std::vector<std::string>& words);

WordLists sample_wordlists();
std::vector<std::string> template_words();

// Zeroes the given residual coordinates in every writer (embeddings, output
// projections, FFN outputs, biases) and in the unembedding, so only planted
// weights touch them.
void reserve_coordinates(TransformerWeights& w, const std::vector<int>& coords);

// Gender words "him"/"her" share embeddings and unembeddings exactly.
struct SymmetricModel {
  TransformerWeights weights;
  Tokenizer tokenizer;
  TokenId him = 0, her = 0;
};
SymmetricModel symmetric_model(uint64_t seed, const ModelConfig& base = tiny_config());

// Gated rmsnorm model with hand-placed circuits on reserved coordinates:
//   bias:       layer-1 FFN neuron firing on every non-start token, writing the gender logit axis
//   general:    layer-0 FFN neuron firing only on the start token, read by a
//               layer-1 attention neuron that boosts both gender words alike
//   capability: optional layer-1 FFN neuron that carries the marker word and
//               a little bias; otherwise the marker is boosted directly.
struct PlantedBias {
  TransformerWeights weights;
  Tokenizer tokenizer;
  TokenId him = 0, her = 0, marker = 0;
  NeuronId bias_neuron, general_ffn, general_attn, capability_neuron;
  bool has_capability_neuron = false;
};
PlantedBias planted_bias_model(uint64_t seed, bool capability_neuron = false);

// CommonWords pairs over sample_wordlists() with the given gender words.
std::vector<PairedCase> commonwords(const std::string& male = "him", const std::string& female = "her");

// Multiple choice cases whose correct answer is always " zork".
std::vector<TaskCase> marker_probe(size_t n, uint64_t seed);

// One neuron in a random model rigged to dominate the importance of `target`.
struct PlantedNeuron {
  TransformerWeights weights;
  std::vector<TokenId> tokens;
  TokenId target = 0;
  NeuronId neuron;
};
PlantedNeuron planted_neuron(uint64_t seed);

// Layer-0 neuron feeding a layer-1 neuron whose coefficient changes sign
// when the upstream neuron is masked.
struct CnaChain {
  TransformerWeights weights;
  std::vector<TokenId> tokens;
  NeuronId upstream, downstream;
};
CnaChain cna_chain(uint64_t seed);

}  // namespace fixtures
