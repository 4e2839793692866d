#include "nlens/forward.hpp"

#include <cmath>
#include <limits>

namespace nlens {

namespace {

float activate(Activation a, float x) {
  switch (a) {
    case Activation::kGelu: {
      constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
      return 0.5f * x * (1.0f + std::tanh(kC * (x + 0.044715f * x * x * x)));
    }
    case Activation::kRelu:
      return x > 0.0f ? x : 0.0f;
    case Activation::kSilu:
      return x / (1.0f + std::exp(-x));
  }
  return x;
}

void normalize_row(const ModelConfig& c, Eigen::Ref<Eigen::RowVectorXf> row, const Vec& gain, const Vec& bias) {
  const auto d = static_cast<double>(row.size());
  if (c.layernorm()) {
    double mean = 0.0;
    for (float x : row) mean += x;
    mean /= d;
    double var = 0.0;
    for (float x : row) var += (x - mean) * (x - mean);
    var /= d;
    const auto inv = static_cast<float>(1.0 / std::sqrt(var + c.norm_eps));
    const auto m = static_cast<float>(mean);
    for (Eigen::Index i = 0; i < row.size(); ++i) row[i] = (row[i] - m) * inv * gain[i] + bias[i];
  } else {
    double ss = 0.0;
    for (float x : row) ss += static_cast<double>(x) * x;
    const auto inv = static_cast<float>(1.0 / std::sqrt(ss / d + c.norm_eps));
    for (Eigen::Index i = 0; i < row.size(); ++i) row[i] = row[i] * inv * gain[i];
  }
}

Mat norm_rows(const ModelConfig& c, const Mat& h, const Vec& gain, const Vec& bias) {
  Mat out = h;
  for (Eigen::Index r = 0; r < out.rows(); ++r) normalize_row(c, out.row(r), gain, bias);
  return out;
}

// Rotates pairs (i, i + d_head/2) of each row by position-dependent angles.
void apply_rotary(const ModelConfig& c, Mat& m) {
  const int half = c.d_head / 2;
  for (Eigen::Index pos = 0; pos < m.rows(); ++pos) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(static_cast<double>(c.rope_theta), -2.0 * i / c.d_head);
      const double angle = static_cast<double>(pos) * freq;
      const auto cs = static_cast<float>(std::cos(angle));
      const auto sn = static_cast<float>(std::sin(angle));
      const float a = m(pos, i);
      const float b = m(pos, i + half);
      m(pos, i) = a * cs - b * sn;
      m(pos, i + half) = b * cs + a * sn;
    }
  }
}

void check_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_seq_len)
    throw InputError("forward: sequence of " + std::to_string(tokens.size()) + " tokens exceeds context limit " +
                     std::to_string(c.max_seq_len));
  for (TokenId t : tokens) {
    if (t < 0 || t >= c.vocab_size) throw InputError("forward: token id " + std::to_string(t) + " out of range");
  }
}

// Runs all layers; fills `trace` when given. Returns h^L for every position.
Mat run_layers(const TransformerWeights& w, std::span<const TokenId> tokens, InferenceTrace* trace) {
  const ModelConfig& c = w.config;
  check_tokens(c, tokens);
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const int dh = c.d_head;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

  Mat h(T, c.d_model);
  for (Eigen::Index i = 0; i < T; ++i) {
    h.row(i) = w.embed.row(tokens[static_cast<size_t>(i)]);
    if (c.position_family == PositionFamily::kLearned) h.row(i) += w.pos_embed.row(i);
  }
  if (trace != nullptr) {
    trace->tokens.assign(tokens.begin(), tokens.end());
    trace->residual.clear();
    trace->layers.clear();
    trace->residual.push_back(h);
  }

  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& L = w.layers[static_cast<size_t>(l)];
    LayerTrace lt;
    Mat x = norm_rows(c, h, L.attn_norm, L.attn_norm_bias);
    Mat attn = Mat::Zero(T, c.d_model);
    attn.rowwise() += L.bo.transpose();
    for (int j = 0; j < c.n_heads; ++j) {
      const auto rows = [&](const Mat& m) { return m.middleRows(j * dh, dh); };
      Mat q = x * rows(L.wq).transpose();
      q.rowwise() += L.bq.segment(j * dh, dh).transpose();
      Mat k = x * rows(L.wk).transpose();
      k.rowwise() += L.bk.segment(j * dh, dh).transpose();
      Mat v = x * rows(L.wv).transpose();
      v.rowwise() += L.bv.segment(j * dh, dh).transpose();
      if (c.position_family == PositionFamily::kRotary) {
        apply_rotary(c, q);
        apply_rotary(c, k);
      }
      Mat probs = Mat::Zero(T, T);
      std::vector<float> scores(static_cast<size_t>(T));
      for (Eigen::Index qi = 0; qi < T; ++qi) {
        float mx = -std::numeric_limits<float>::infinity();
        for (Eigen::Index ki = 0; ki <= qi; ++ki) {
          scores[static_cast<size_t>(ki)] = q.row(qi).dot(k.row(ki)) * scale;
          mx = std::max(mx, scores[static_cast<size_t>(ki)]);
        }
        double sum = 0.0;
        for (Eigen::Index ki = 0; ki <= qi; ++ki) sum += std::exp(static_cast<double>(scores[static_cast<size_t>(ki)] - mx));
        for (Eigen::Index ki = 0; ki <= qi; ++ki)
          probs(qi, ki) = static_cast<float>(std::exp(static_cast<double>(scores[static_cast<size_t>(ki)] - mx)) / sum);
      }
      attn += (probs * v) * L.wo.middleCols(j * dh, dh).transpose();
      if (trace != nullptr) lt.attn_probs.push_back(std::move(probs));
    }

    Mat mid = h + attn;
    Mat y = norm_rows(c, mid, L.ffn_norm, L.ffn_norm_bias);
    Mat pre = y * L.fc1.transpose();
    pre.rowwise() += L.fc1_bias.transpose();
    Mat coef(T, c.d_ffn);
    if (c.gated()) {
      const Mat g = y * L.gate.transpose();
      for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = activate(c.activation, g.data()[i]) * pre.data()[i];
    } else {
      for (Eigen::Index i = 0; i < coef.size(); ++i) coef.data()[i] = activate(c.activation, pre.data()[i]);
    }
    Mat ffn = coef * L.fc2.transpose();
    ffn.rowwise() += L.fc2_bias.transpose();
    h = mid + ffn;

    if (trace != nullptr) {
      lt.attn_in = std::move(x);
      lt.attn_out = std::move(attn);
      lt.ffn_in = std::move(y);
      lt.coefficients = std::move(coef);
      lt.ffn_out = std::move(ffn);
      trace->layers.push_back(std::move(lt));
      trace->residual.push_back(h);
    }
  }
  return h;
}

void check_layer(const InferenceTrace& trace, int layer) {
  if (layer < 0 || layer >= static_cast<int>(trace.layers.size()))
    throw InputError("layer " + std::to_string(layer) + " out of bounds");
}

void check_position(const InferenceTrace& trace, int position) {
  if (position < 0 || position >= trace.length())
    throw InputError("position " + std::to_string(position) + " out of bounds");
}

}  // namespace

Vec apply_final_norm(const TransformerWeights& w, const Vec& v) {
  Eigen::RowVectorXf row = v.transpose();
  normalize_row(w.config, row, w.final_norm, w.final_norm_bias);
  return row.transpose();
}

Vec logits_of(const TransformerWeights& w, const Vec& v) { return w.unembed * apply_final_norm(w, v); }

Vec log_softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  double sum = 0.0;
  for (float x : logits) sum += std::exp(static_cast<double>(x) - mx);
  const double lse = mx + std::log(sum);
  Vec out(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(logits[i] - lse);
  return out;
}

Vec softmax(const Vec& logits) {
  const double mx = logits.maxCoeff();
  double sum = 0.0;
  for (float x : logits) sum += std::exp(static_cast<double>(x) - mx);
  Vec out(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(std::exp(logits[i] - mx) / sum);
  return out;
}

InferenceTrace forward(const TransformerWeights& weights, std::span<const TokenId> tokens) {
  InferenceTrace trace;
  const Mat h = run_layers(weights, tokens, &trace);
  trace.logits = logits_of(weights, h.row(h.rows() - 1).transpose());
  trace.probs = softmax(trace.logits);
  return trace;
}

std::vector<double> next_token_logprobs(const TransformerWeights& weights, std::span<const TokenId> tokens) {
  const Mat h = run_layers(weights, tokens, nullptr);
  std::vector<double> out;
  out.reserve(tokens.size());
  for (size_t t = 1; t < tokens.size(); ++t) {
    const Vec logits = logits_of(weights, h.row(static_cast<Eigen::Index>(t - 1)).transpose());
    const double mx = logits.maxCoeff();
    double sum = 0.0;
    for (float x : logits) sum += std::exp(static_cast<double>(x) - mx);
    out.push_back(static_cast<double>(logits[tokens[t]]) - mx - std::log(sum));
  }
  return out;
}

std::vector<TokenId> greedy_generate(const TransformerWeights& weights, std::span<const TokenId> prompt, int n_tokens) {
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  std::vector<TokenId> out;
  for (int i = 0; i < n_tokens && static_cast<int>(seq.size()) < weights.config.max_seq_len; ++i) {
    const Mat h = run_layers(weights, seq, nullptr);
    const Vec logits = logits_of(weights, h.row(h.rows() - 1).transpose());
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.size(); ++k) {
      if (logits[k] > logits[best]) best = k;
    }
    seq.push_back(static_cast<TokenId>(best));
    out.push_back(static_cast<TokenId>(best));
  }
  return out;
}

const Mat& ffn_coefficients(const InferenceTrace& trace, int layer) {
  check_layer(trace, layer);
  return trace.layers[static_cast<size_t>(layer)].coefficients;
}

std::vector<PositionedContribution> ffn_neuron_contributions(const TransformerWeights& weights,
                                                             const InferenceTrace& trace, int layer, int position) {
  check_layer(trace, layer);
  check_position(trace, position);
  const auto& L = weights.layers[static_cast<size_t>(layer)];
  const Mat& m = trace.layers[static_cast<size_t>(layer)].coefficients;
  std::vector<PositionedContribution> out;
  out.reserve(static_cast<size_t>(m.cols()));
  for (int k = 0; k < m.cols(); ++k) {
    const float coef = m(position, k);
    out.push_back({NeuronId::ffn(layer, k), position, coef * L.fc2.col(k), coef});
  }
  return out;
}

Mat head_values(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head) {
  check_layer(trace, layer);
  const ModelConfig& c = weights.config;
  if (head < 0 || head >= c.n_heads) throw InputError("head " + std::to_string(head) + " out of bounds");
  const auto& L = weights.layers[static_cast<size_t>(layer)];
  Mat v = trace.layers[static_cast<size_t>(layer)].attn_in * L.wv.middleRows(head * c.d_head, c.d_head).transpose();
  v.rowwise() += L.bv.segment(head * c.d_head, c.d_head).transpose();
  return v;
}

std::vector<PositionedContribution> attn_neuron_contributions(const TransformerWeights& weights,
                                                              const InferenceTrace& trace, int layer, int head,
                                                              int position) {
  const Mat values = head_values(weights, trace, layer, head);
  check_position(trace, position);
  const ModelConfig& c = weights.config;
  const auto& L = weights.layers[static_cast<size_t>(layer)];
  const Mat& probs = trace.layers[static_cast<size_t>(layer)].attn_probs[static_cast<size_t>(head)];
  std::vector<PositionedContribution> out;
  out.reserve(static_cast<size_t>((position + 1) * c.d_head));
  for (int p = 0; p <= position; ++p) {
    for (int k = 0; k < c.d_head; ++k) {
      const float coef = probs(position, p) * values(p, k);
      out.push_back({NeuronId::attn(layer, head, k), p, coef * L.wo.col(head * c.d_head + k), coef});
    }
  }
  return out;
}

NeuronContribution neuron_contribution(const TransformerWeights& weights, const InferenceTrace& trace,
                                       const NeuronId& id, int position) {
  check_neuron(weights.config, id);
  check_layer(trace, id.layer);
  check_position(trace, position);
  const auto& L = weights.layers[static_cast<size_t>(id.layer)];
  NeuronContribution out;
  if (id.is_ffn()) {
    out.coefficient = trace.layers[static_cast<size_t>(id.layer)].coefficients(position, id.index);
    out.vector = out.coefficient * L.fc2.col(id.index);
    return out;
  }
  const int dh = weights.config.d_head;
  const Mat& probs = trace.layers[static_cast<size_t>(id.layer)].attn_probs[static_cast<size_t>(id.head)];
  const Vec& x_row_key = L.wv.row(id.head * dh + id.index).transpose();
  const float bias = L.bv[id.head * dh + id.index];
  const Mat& x = trace.layers[static_cast<size_t>(id.layer)].attn_in;
  double coef = 0.0;
  for (int p = 0; p <= position; ++p) {
    coef += static_cast<double>(probs(position, p)) * (x.row(p).dot(x_row_key) + bias);
  }
  out.coefficient = static_cast<float>(coef);
  out.vector = out.coefficient * L.wo.col(id.head * dh + id.index);
  return out;
}

Vec head_output(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head, int position) {
  const Mat values = head_values(weights, trace, layer, head);
  check_position(trace, position);
  const int dh = weights.config.d_head;
  const Mat& probs = trace.layers[static_cast<size_t>(layer)].attn_probs[static_cast<size_t>(head)];
  const Eigen::RowVectorXf mixed = probs.row(position) * values;
  return weights.layers[static_cast<size_t>(layer)].wo.middleCols(head * dh, dh) * mixed.transpose();
}

size_t utf8_length(std::string_view text) {
  size_t n = 0;
  for (unsigned char c : text) {
    if ((c & 0xc0) != 0x80) ++n;
  }
  return n;
}

double char_normalized_entropy(const TransformerWeights& weights, const Tokenizer& tokenizer, std::string_view text) {
  if (text.empty()) throw InputError("entropy: empty text");
  const auto tokens = tokenizer.encode(text);
  if (tokens.size() < 2) throw InputError("entropy: text '" + std::string(text) + "' has fewer than 2 tokens");
  double nll = 0.0;
  for (double lp : next_token_logprobs(weights, tokens)) nll -= lp;
  return nll / static_cast<double>(utf8_length(text));
}

}  // namespace nlens
