#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace nlens {

// Raised for malformed user inputs (bad files, out-of-range ids, bad params).
// Everything else that escapes the library is a runtime failure.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenId = int32_t;

enum class FfnFamily { kSingleGate, kGated };
enum class NormFamily { kLayerNorm, kRmsNorm };
enum class PositionFamily { kLearned, kRotary };
enum class Activation { kGelu, kRelu, kSilu };

struct ModelConfig {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 4;
  int d_head = 16;
  int d_ffn = 256;
  int vocab_size = 256;
  int max_seq_len = 128;
  FfnFamily ffn_family = FfnFamily::kSingleGate;
  NormFamily norm_family = NormFamily::kLayerNorm;
  PositionFamily position_family = PositionFamily::kLearned;
  Activation activation = Activation::kGelu;
  bool use_bias = false;
  float norm_eps = 1e-5f;
  float rope_theta = 10000.0f;
  // -1 when the vocabulary has no beginning-of-sequence token.
  TokenId bos_token_id = -1;

  void validate() const;

  bool gated() const { return ffn_family == FfnFamily::kGated; }
  bool layernorm() const { return norm_family == NormFamily::kLayerNorm; }
  bool has_bos() const { return bos_token_id >= 0; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::filesystem::path& path);
void save_config(const ModelConfig& config, const std::filesystem::path& path);

std::string to_string(FfnFamily f);
std::string to_string(NormFamily f);
std::string to_string(PositionFamily f);
std::string to_string(Activation a);

}  // namespace nlens
