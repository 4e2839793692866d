#include "nlens/weights.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "nlens/safetensors.hpp"

namespace nlens {

std::string to_string(const NeuronId& id) {
  std::ostringstream os;
  if (id.is_ffn()) {
    os << "ffn:" << id.layer << ":" << id.index;
  } else {
    os << "attn:" << id.layer << ":" << id.head << ":" << id.index;
  }
  return os.str();
}

std::string label(const NeuronId& id) {
  std::ostringstream os;
  if (id.is_ffn()) {
    os << "ffn L" << id.layer << " N" << id.index;
  } else {
    os << "attn L" << id.layer << "H" << id.head << " N" << id.index;
  }
  return os.str();
}

NeuronId parse_neuron_id(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  auto num = [&](const std::string& s) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty() || v < 0) throw InputError("bad neuron id '" + text + "'");
    return v;
  };
  if (parts.size() == 3 && parts[0] == "ffn") return NeuronId::ffn(num(parts[1]), num(parts[2]));
  if (parts.size() == 4 && parts[0] == "attn") return NeuronId::attn(num(parts[1]), num(parts[2]), num(parts[3]));
  throw InputError("bad neuron id '" + text + "' (expected ffn:L:N or attn:L:H:N)");
}

namespace {

std::string layer_name(int l, const char* leaf) { return "layers." + std::to_string(l) + "." + leaf; }

template <typename Weights, typename Fn>
void visit_tensors(Weights& w, Fn&& fn) {
  const ModelConfig& c = w.config;
  const int64_t d = c.d_model;
  auto mat = [&](const std::string& name, auto& m) {
    fn(name, std::vector<int64_t>{m.rows(), m.cols()}, std::span(m.data(), static_cast<size_t>(m.size())));
  };
  auto vec = [&](const std::string& name, auto& v) {
    fn(name, std::vector<int64_t>{v.size()}, std::span(v.data(), static_cast<size_t>(v.size())));
  };
  const bool ln = c.layernorm();
  mat("embed", w.embed);
  if (c.position_family == PositionFamily::kLearned) mat("pos_embed", w.pos_embed);
  for (int l = 0; l < c.n_layers; ++l) {
    auto& L = w.layers[static_cast<size_t>(l)];
    vec(layer_name(l, "attn_norm"), L.attn_norm);
    if (ln) vec(layer_name(l, "attn_norm_bias"), L.attn_norm_bias);
    mat(layer_name(l, "attn.q"), L.wq);
    mat(layer_name(l, "attn.k"), L.wk);
    mat(layer_name(l, "attn.v"), L.wv);
    mat(layer_name(l, "attn.o"), L.wo);
    if (c.use_bias) {
      vec(layer_name(l, "attn.q_bias"), L.bq);
      vec(layer_name(l, "attn.k_bias"), L.bk);
      vec(layer_name(l, "attn.v_bias"), L.bv);
      vec(layer_name(l, "attn.o_bias"), L.bo);
    }
    vec(layer_name(l, "ffn_norm"), L.ffn_norm);
    if (ln) vec(layer_name(l, "ffn_norm_bias"), L.ffn_norm_bias);
    mat(layer_name(l, "ffn.fc1"), L.fc1);
    if (c.gated()) mat(layer_name(l, "ffn.gate"), L.gate);
    mat(layer_name(l, "ffn.fc2"), L.fc2);
    if (c.use_bias) {
      vec(layer_name(l, "ffn.fc1_bias"), L.fc1_bias);
      vec(layer_name(l, "ffn.fc2_bias"), L.fc2_bias);
    }
  }
  vec("final_norm", w.final_norm);
  if (ln) vec("final_norm_bias", w.final_norm_bias);
  mat("unembed", w.unembed);
  (void)d;
}

}  // namespace

void TransformerWeights::for_each_tensor(
    const std::function<void(const std::string&, std::vector<int64_t>, std::span<float>)>& fn) {
  visit_tensors(*this, fn);
}

void TransformerWeights::for_each_tensor(
    const std::function<void(const std::string&, std::vector<int64_t>, std::span<const float>)>& fn) const {
  visit_tensors(*this, [&](const std::string& n, std::vector<int64_t> s, std::span<const float> v) { fn(n, s, v); });
}

TransformerWeights zero_model(const ModelConfig& config) {
  config.validate();
  const int d = config.d_model;
  const int n = config.d_ffn;
  TransformerWeights w;
  w.config = config;
  w.embed = Mat::Zero(config.vocab_size, d);
  w.pos_embed = config.position_family == PositionFamily::kLearned ? Mat::Zero(config.max_seq_len, d) : Mat();
  w.unembed = Mat::Zero(config.vocab_size, d);
  w.final_norm = Vec::Ones(d);
  w.final_norm_bias = Vec::Zero(d);
  w.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& L : w.layers) {
    L.attn_norm = Vec::Ones(d);
    L.attn_norm_bias = Vec::Zero(d);
    L.wq = Mat::Zero(d, d);
    L.wk = Mat::Zero(d, d);
    L.wv = Mat::Zero(d, d);
    L.wo = Mat::Zero(d, d);
    L.bq = Vec::Zero(d);
    L.bk = Vec::Zero(d);
    L.bv = Vec::Zero(d);
    L.bo = Vec::Zero(d);
    L.ffn_norm = Vec::Ones(d);
    L.ffn_norm_bias = Vec::Zero(d);
    L.fc1 = Mat::Zero(n, d);
    L.fc2 = Mat::Zero(d, n);
    L.gate = config.gated() ? Mat::Zero(n, d) : Mat();
    L.fc1_bias = Vec::Zero(n);
    L.fc2_bias = Vec::Zero(d);
  }
  return w;
}

TransformerWeights random_model(const ModelConfig& config, uint64_t seed) {
  TransformerWeights w = zero_model(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f / std::sqrt(static_cast<float>(config.d_model)));
  w.for_each_tensor([&](const std::string& name, std::vector<int64_t>, std::span<float> data) {
    const bool norm_gain = name == "final_norm" || name.ends_with("attn_norm") || name.ends_with("ffn_norm");
    const bool norm_bias = name.ends_with("norm_bias");
    if (norm_gain || norm_bias) return;
    for (auto& x : data) x = dist(rng);
  });
  return w;
}

TransformerWeights load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  const safetensors::File file = safetensors::read(path);
  TransformerWeights w = zero_model(config);
  w.for_each_tensor([&](const std::string& name, std::vector<int64_t> shape, std::span<float> data) {
    const safetensors::Tensor* t = file.find(name);
    if (t == nullptr) throw InputError("missing tensor " + name);
    if (t->shape != shape) {
      std::ostringstream os;
      os << "shape mismatch for tensor " << name << ": expected [";
      for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
      os << "] got [";
      for (size_t i = 0; i < t->shape.size(); ++i) os << (i ? "," : "") << t->shape[i];
      os << "]";
      throw InputError(os.str());
    }
    std::memcpy(data.data(), t->data.data(), data.size() * sizeof(float));
  });
  return w;
}

void export_weights(const TransformerWeights& weights, const std::filesystem::path& path) {
  safetensors::File file;
  file.metadata["format"] = "nlens";
  weights.for_each_tensor([&](const std::string& name, std::vector<int64_t> shape, std::span<const float> data) {
    safetensors::Tensor t;
    t.shape = std::move(shape);
    t.data.assign(data.begin(), data.end());
    file.tensors.emplace_back(name, std::move(t));
  });
  safetensors::write(path, file);
}

std::string weights_hash(const TransformerWeights& weights) {
  uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  weights.for_each_tensor([&](const std::string& name, std::vector<int64_t> shape, std::span<const float> data) {
    mix(name.data(), name.size());
    mix(shape.data(), shape.size() * sizeof(int64_t));
    mix(data.data(), data.size() * sizeof(float));
  });
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void check_neuron(const ModelConfig& c, const NeuronId& id) {
  auto fail = [&]() { throw InputError("neuron " + to_string(id) + " out of bounds"); };
  if (id.layer < 0 || id.layer >= c.n_layers || id.index < 0) fail();
  if (id.is_ffn()) {
    if (id.head != 0 || id.index >= c.d_ffn) fail();
  } else {
    if (id.head < 0 || id.head >= c.n_heads || id.index >= c.d_head) fail();
  }
}

NeuronVectors get_neuron(const TransformerWeights& weights, const NeuronId& id) {
  check_neuron(weights.config, id);
  const auto& L = weights.layers[static_cast<size_t>(id.layer)];
  NeuronVectors out;
  if (id.is_ffn()) {
    out.subkeys.push_back(L.fc1.row(id.index).transpose());
    if (weights.config.gated()) out.subkeys.push_back(L.gate.row(id.index).transpose());
    out.subvalue = L.fc2.col(id.index);
  } else {
    const int k = id.head * weights.config.d_head + id.index;
    out.subkeys.push_back(L.wv.row(k).transpose());
    out.subvalue = L.wo.col(k);
  }
  return out;
}

int ffn_neuron_count(const ModelConfig& c) { return c.n_layers * c.d_ffn; }
int attn_neuron_count(const ModelConfig& c) { return c.n_layers * c.n_heads * c.d_head; }

std::vector<NeuronId> all_neurons(const ModelConfig& c) {
  std::vector<NeuronId> ids;
  ids.reserve(static_cast<size_t>(ffn_neuron_count(c) + attn_neuron_count(c)));
  for (int l = 0; l < c.n_layers; ++l) {
    for (int k = 0; k < c.d_ffn; ++k) ids.push_back(NeuronId::ffn(l, k));
    for (int h = 0; h < c.n_heads; ++h) {
      for (int k = 0; k < c.d_head; ++k) ids.push_back(NeuronId::attn(l, h, k));
    }
  }
  return ids;
}

}  // namespace nlens
