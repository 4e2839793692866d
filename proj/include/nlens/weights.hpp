#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nlens/config.hpp"
#include "nlens/neuron.hpp"

namespace nlens {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXf;

// Per-layer parameters. Attention projections are d_model x d_model with
// head j owning rows [j*d_head, (j+1)*d_head) of wq/wk/wv and the same
// columns of wo. Row k of a head's wv slice is that attention neuron's
// subkey; the matching wo column is its subvalue.
//
// Row k of fc1 (and gate, for the gated family) is FFN neuron k's subkey;
// column k of fc2 is its subvalue.
//
// Bias vectors are always allocated; they stay zero unless the config
// enables biases (or layernorm, for the norm biases).
struct LayerWeights {
  Vec attn_norm, attn_norm_bias;
  Mat wq, wk, wv, wo;
  Vec bq, bk, bv, bo;
  Vec ffn_norm, ffn_norm_bias;
  Mat fc1, fc2, gate;
  Vec fc1_bias, fc2_bias;
};

struct TransformerWeights {
  ModelConfig config;
  Mat embed;      // vocab x d_model
  Mat pos_embed;  // max_seq_len x d_model, learned positions only
  Mat unembed;    // vocab x d_model
  Vec final_norm, final_norm_bias;
  std::vector<LayerWeights> layers;

  // Every tensor that belongs in the container for this config, in export
  // order. The callback sees the tensor name, its shape and a view of its data.
  void for_each_tensor(
      const std::function<void(const std::string&, std::vector<int64_t>, std::span<float>)>& fn);
  void for_each_tensor(
      const std::function<void(const std::string&, std::vector<int64_t>, std::span<const float>)>& fn) const;
};

// All-zero weights with unit norm gains, correctly shaped for `config`.
TransformerWeights zero_model(const ModelConfig& config);

// Deterministic N(0, 1/d_model) initialisation; norm gains are 1.
TransformerWeights random_model(const ModelConfig& config, uint64_t seed);

TransformerWeights load_weights(const std::filesystem::path& path, const ModelConfig& config);
void export_weights(const TransformerWeights& weights, const std::filesystem::path& path);

// 16 hex digits of FNV-1a over tensor names, shapes and fp32 bytes.
std::string weights_hash(const TransformerWeights& weights);

struct NeuronVectors {
  // FFN: fc1 row, plus gate row for the gated family. Attention: wv row.
  std::vector<Vec> subkeys;
  Vec subvalue;
};

void check_neuron(const ModelConfig& config, const NeuronId& id);
NeuronVectors get_neuron(const TransformerWeights& weights, const NeuronId& id);

// Total neuron counts, for enumeration.
int ffn_neuron_count(const ModelConfig& config);
int attn_neuron_count(const ModelConfig& config);
std::vector<NeuronId> all_neurons(const ModelConfig& config);

}  // namespace nlens
