#include "nlens/config.hpp"

#include <fstream>

namespace nlens {

namespace {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table, const char* field) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw InputError(std::string("config: unknown ") + field + " '" + s + "'");
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw InputError(std::string("config: ") + name + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_head, "d_head");
  positive(d_ffn, "d_ffn");
  positive(max_seq_len, "max_seq_len");
  if (vocab_size < 2) throw InputError("config: vocab_size must be >= 2");
  if (d_model != n_heads * d_head) throw InputError("config: d_model must equal n_heads * d_head");
  if (position_family == PositionFamily::kRotary && d_head % 2 != 0)
    throw InputError("config: rotary positions need an even d_head");
  if (bos_token_id >= vocab_size) throw InputError("config: bos_token_id outside vocabulary");
  if (!(norm_eps > 0.0f)) throw InputError("config: norm_eps must be positive");
}

std::string to_string(FfnFamily f) { return f == FfnFamily::kGated ? "gated" : "single-gate"; }
std::string to_string(NormFamily f) { return f == NormFamily::kRmsNorm ? "rmsnorm" : "layernorm"; }
std::string to_string(PositionFamily f) { return f == PositionFamily::kRotary ? "rotary" : "learned"; }
std::string to_string(Activation a) {
  switch (a) {
    case Activation::kGelu: return "gelu";
    case Activation::kRelu: return "relu";
    case Activation::kSilu: return "silu";
  }
  return "gelu";
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"n_layers", c.n_layers},
      {"d_model", c.d_model},
      {"n_heads", c.n_heads},
      {"d_head", c.d_head},
      {"d_ffn", c.d_ffn},
      {"vocab_size", c.vocab_size},
      {"max_seq_len", c.max_seq_len},
      {"ffn_family", to_string(c.ffn_family)},
      {"norm_family", to_string(c.norm_family)},
      {"position_family", to_string(c.position_family)},
      {"activation", to_string(c.activation)},
      {"use_bias", c.use_bias},
      {"norm_eps", c.norm_eps},
      {"rope_theta", c.rope_theta},
      {"bos_token_id", c.bos_token_id},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_head = j.value("d_head", c.n_heads > 0 ? c.d_model / c.n_heads : 0);
    c.d_ffn = j.at("d_ffn").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.ffn_family = parse_enum<FfnFamily>(j.value("ffn_family", std::string("single-gate")),
                                         {{"single-gate", FfnFamily::kSingleGate}, {"gated", FfnFamily::kGated}},
                                         "ffn_family");
    c.norm_family = parse_enum<NormFamily>(
        j.value("norm_family", std::string("layernorm")),
        {{"layernorm", NormFamily::kLayerNorm}, {"pre-layernorm", NormFamily::kLayerNorm},
         {"rmsnorm", NormFamily::kRmsNorm}, {"pre-rmsnorm", NormFamily::kRmsNorm}},
        "norm_family");
    c.position_family = parse_enum<PositionFamily>(
        j.value("position_family", std::string("learned")),
        {{"learned", PositionFamily::kLearned}, {"learned-absolute", PositionFamily::kLearned},
         {"rotary", PositionFamily::kRotary}},
        "position_family");
    const std::string default_act = c.ffn_family == FfnFamily::kGated ? "silu" : "gelu";
    c.activation = parse_enum<Activation>(j.value("activation", default_act),
                                          {{"gelu", Activation::kGelu}, {"relu", Activation::kRelu},
                                           {"silu", Activation::kSilu}},
                                          "activation");
    c.use_bias = j.value("use_bias", false);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.rope_theta = j.value("rope_theta", c.rope_theta);
    c.bos_token_id = j.value("bos_token_id", -1);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void save_config(const ModelConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace nlens
