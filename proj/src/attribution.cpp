#include "nlens/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "nlens/editing.hpp"
#include "nlens/metrics.hpp"
#include "nlens/parallel.hpp"

namespace nlens {

namespace {

using VecD = Eigen::VectorXd;

// Final norm, unembedding and log-softmax in double precision. Importance
// scores are small differences of log-probabilities, so the readout should
// not add fp32 rounding on top of the trace.
class Readout {
 public:
  explicit Readout(const TransformerWeights& w)
      : config_(w.config),
        unembed_(w.unembed.cast<double>()),
        gain_(w.final_norm.cast<double>()),
        bias_(w.final_norm_bias.cast<double>()) {}

  double log_prob(const VecD& h, TokenId target) const {
    const double d = static_cast<double>(h.size());
    const double eps = config_.norm_eps;
    VecD y;
    if (config_.layernorm()) {
      const VecD centered = h.array() - h.mean();
      y = (centered / std::sqrt(centered.squaredNorm() / d + eps)).cwiseProduct(gain_) + bias_;
    } else {
      y = (h / std::sqrt(h.squaredNorm() / d + eps)).cwiseProduct(gain_);
    }
    const VecD logits = unembed_ * y;
    const double mx = logits.maxCoeff();
    const double sum = (logits.array() - mx).exp().sum();
    return logits[target] - mx - std::log(sum);
  }

 private:
  ModelConfig config_;
  Eigen::MatrixXd unembed_;
  VecD gain_, bias_;
};

VecD dbl(const Vec& v) { return v.cast<double>(); }

void check_target(const ModelConfig& c, TokenId target) {
  if (target < 0 || target >= c.vocab_size) throw InputError("target token " + std::to_string(target) + " out of range");
}

Vec row(const Mat& m, int r) { return m.row(r).transpose(); }

// Indices into `scores` sorted by descending key, stable so canonical order breaks ties.
std::vector<size_t> rank_desc(const std::vector<size_t>& idx, const std::vector<double>& key) {
  std::vector<size_t> out = idx;
  std::stable_sort(out.begin(), out.end(), [&](size_t a, size_t b) { return key[a] > key[b]; });
  return out;
}

struct HeadState {
  Eigen::MatrixXd values;    // T x d_head
  Eigen::RowVectorXd coefs;  // final-position coefficient per neuron
};

// Value activations and their mixing in double; same quantities as
// head_values() and attn_probs, without the fp32 matrix product.
HeadState head_state(const TransformerWeights& w, const InferenceTrace& trace, int layer, int head) {
  const ModelConfig& c = w.config;
  if (head < 0 || head >= c.n_heads) throw InputError("head " + std::to_string(head) + " out of bounds");
  const auto& L = w.layers[static_cast<size_t>(layer)];
  const auto& LT = trace.layers[static_cast<size_t>(layer)];
  HeadState s;
  s.values = LT.attn_in.cast<double>() * L.wv.middleRows(head * c.d_head, c.d_head).cast<double>().transpose();
  s.values.rowwise() += L.bv.segment(head * c.d_head, c.d_head).cast<double>().transpose();
  s.coefs = LT.attn_probs[static_cast<size_t>(head)].row(trace.last()).cast<double>() * s.values;
  return s;
}

int ffn_dominant(const InferenceTrace& trace, int layer, int k) {
  const Mat& m = trace.layers[static_cast<size_t>(layer)].coefficients;
  int best = 0;
  for (int i = 1; i < m.rows(); ++i) {
    if (std::abs(m(i, k)) > std::abs(m(best, k))) best = i;
  }
  return best;
}

int attn_dominant(const InferenceTrace& trace, const HeadState& s, int layer, int head, int k) {
  const Mat& probs = trace.layers[static_cast<size_t>(layer)].attn_probs[static_cast<size_t>(head)];
  const int last = trace.last();
  int best = 0;
  double best_score = -1.0;
  for (int p = 0; p <= last; ++p) {
    const double score = probs(last, p) * std::abs(s.values(p, k));
    if (score > best_score) {
      best_score = score;
      best = p;
    }
  }
  return best;
}

// Dominant position of every neuron, indexed like all_neurons().
std::vector<int> all_dominant_positions(const TransformerWeights& w, const InferenceTrace& trace) {
  const ModelConfig& c = w.config;
  std::vector<int> out;
  out.reserve(static_cast<size_t>(ffn_neuron_count(c) + attn_neuron_count(c)));
  for (int l = 0; l < c.n_layers; ++l) {
    for (int k = 0; k < c.d_ffn; ++k) out.push_back(ffn_dominant(trace, l, k));
    for (int h = 0; h < c.n_heads; ++h) {
      const HeadState s = head_state(w, trace, l, h);
      for (int k = 0; k < c.d_head; ++k) out.push_back(attn_dominant(trace, s, l, h, k));
    }
  }
  return out;
}

float final_coefficient(const TransformerWeights& w, const InferenceTrace& trace, const NeuronId& id) {
  return neuron_contribution(w, trace, id, trace.last()).coefficient;
}

InferenceTrace trace_prompt(const TransformerWeights& w, const Tokenizer& tok, const std::string& prompt) {
  const auto tokens = tok.encode(prompt);
  return forward(w, tokens);
}

// Modal position across cases (ties to the smaller position) and the share at 0.
std::pair<int, double> summarize_positions(const std::vector<std::vector<int>>& per_case, size_t neuron) {
  std::map<int, int> counts;
  for (const auto& positions : per_case) ++counts[positions[neuron]];
  int mode = 0, best = -1;
  for (const auto& [pos, n] : counts) {
    if (n > best) {
      best = n;
      mode = pos;
    }
  }
  const double start = counts.contains(0) ? static_cast<double>(counts[0]) / static_cast<double>(per_case.size()) : 0.0;
  return {mode, start};
}

}  // namespace

std::string to_string(NeuronRole role) {
  switch (role) {
    case NeuronRole::kFfnValue: return "ffn-value";
    case NeuronRole::kAttnValue: return "attn-value";
    case NeuronRole::kFfnQuery: return "ffn-query";
  }
  return "ffn-value";
}

NeuronRole parse_role(const std::string& s) {
  for (auto r : {NeuronRole::kFfnValue, NeuronRole::kAttnValue, NeuronRole::kFfnQuery}) {
    if (to_string(r) == s) return r;
  }
  throw InputError("unknown neuron role '" + s + "'");
}

ProjectionReport unembed_project(const TransformerWeights& weights, const Vec& vector, int n_top) {
  if (vector.size() != weights.config.d_model)
    throw InputError("projection: vector length " + std::to_string(vector.size()) + " != d_model");
  const Vec probs = softmax(logits_of(weights, vector));
  const int n = std::clamp(n_top, 0, static_cast<int>(probs.size()));
  std::vector<TokenId> order(static_cast<size_t>(probs.size()));
  std::iota(order.begin(), order.end(), 0);
  ProjectionReport r;
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
  for (int i = 0; i < n; ++i) r.top.push_back({order[static_cast<size_t>(i)], probs[order[static_cast<size_t>(i)]]});
  std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] < probs[b]; });
  for (int i = 0; i < n; ++i) r.last.push_back({order[static_cast<size_t>(i)], probs[order[static_cast<size_t>(i)]]});
  return r;
}

double ffn_value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                            TokenId target) {
  if (!neuron.is_ffn()) throw InputError("ffn_value_importance: " + to_string(neuron) + " is not an FFN neuron");
  check_target(weights.config, target);
  const auto contribution = neuron_contribution(weights, trace, neuron, trace.last());
  const auto& L = trace.layers[static_cast<size_t>(neuron.layer)];
  const Vec base = row(trace.residual[static_cast<size_t>(neuron.layer)], trace.last()) + row(L.attn_out, trace.last());
  const Readout readout(weights);
  return readout.log_prob(dbl(base) + dbl(contribution.vector), target) - readout.log_prob(dbl(base), target);
}

double attn_value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                             TokenId target) {
  if (!neuron.is_attn()) throw InputError("attn_value_importance: " + to_string(neuron) + " is not an attention neuron");
  check_target(weights.config, target);
  const auto contribution = neuron_contribution(weights, trace, neuron, trace.last());
  const Vec base = row(trace.residual[static_cast<size_t>(neuron.layer)], trace.last());
  const Readout readout(weights);
  return readout.log_prob(dbl(base) + dbl(contribution.vector), target) - readout.log_prob(dbl(base), target);
}

double value_importance(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron,
                        TokenId target) {
  return neuron.is_ffn() ? ffn_value_importance(weights, trace, neuron, target)
                         : attn_value_importance(weights, trace, neuron, target);
}

std::vector<double> all_value_importances(const TransformerWeights& weights, const InferenceTrace& trace,
                                          TokenId target) {
  const ModelConfig& c = weights.config;
  check_target(c, target);
  const int last = trace.last();
  const size_t per_layer = static_cast<size_t>(c.d_ffn + c.n_heads * c.d_head);
  std::vector<double> out(per_layer * static_cast<size_t>(c.n_layers));
  // one task per (layer, block): block 0 is the FFN, block 1 + h is head h
  const size_t blocks = static_cast<size_t>(1 + c.n_heads);
  const Readout readout(weights);
  parallel_for(static_cast<size_t>(c.n_layers) * blocks, [&](size_t task) {
    const int l = static_cast<int>(task / blocks);
    const int block = static_cast<int>(task % blocks);
    const auto& L = weights.layers[static_cast<size_t>(l)];
    const auto& LT = trace.layers[static_cast<size_t>(l)];
    const size_t offset = per_layer * static_cast<size_t>(l);
    const VecD h_prev = dbl(row(trace.residual[static_cast<size_t>(l)], last));
    if (block == 0) {
      const VecD base = h_prev + dbl(row(LT.attn_out, last));
      const double base_lp = readout.log_prob(base, target);
      for (int k = 0; k < c.d_ffn; ++k) {
        const double m = LT.coefficients(last, k);
        out[offset + static_cast<size_t>(k)] = readout.log_prob(base + m * dbl(L.fc2.col(k)), target) - base_lp;
      }
      return;
    }
    const int h = block - 1;
    const double base_lp = readout.log_prob(h_prev, target);
    const HeadState s = head_state(weights, trace, l, h);
    for (int k = 0; k < c.d_head; ++k) {
      const VecD v = s.coefs[k] * dbl(L.wo.col(h * c.d_head + k));
      out[offset + static_cast<size_t>(c.d_ffn + h * c.d_head + k)] = readout.log_prob(h_prev + v, target) - base_lp;
    }
  });
  return out;
}

int dominant_position(const TransformerWeights& weights, const InferenceTrace& trace, const NeuronId& neuron) {
  check_neuron(weights.config, neuron);
  if (neuron.layer >= static_cast<int>(trace.layers.size())) throw InputError("trace does not cover layer");
  if (neuron.is_ffn()) return ffn_dominant(trace, neuron.layer, neuron.index);
  const HeadState s = head_state(weights, trace, neuron.layer, neuron.head);
  return attn_dominant(trace, s, neuron.layer, neuron.head, neuron.index);
}

ValueNeurons top_value_neurons(const TransformerWeights& weights, const InferenceTrace& trace, TokenId target,
                               size_t n) {
  if (n == 0) throw InputError("top_value_neurons: n must be >= 1");
  const auto ids = all_neurons(weights.config);
  const auto scores = all_value_importances(weights, trace, target);
  std::vector<size_t> ffn_idx, attn_idx;
  for (size_t i = 0; i < ids.size(); ++i) (ids[i].is_ffn() ? ffn_idx : attn_idx).push_back(i);
  auto build = [&](const std::vector<size_t>& idx, NeuronRole role) {
    std::vector<NeuronReport> out;
    const auto ranked = rank_desc(idx, scores);
    for (size_t r = 0; r < std::min(n, ranked.size()); ++r) {
      const NeuronId& id = ids[ranked[r]];
      NeuronReport rep;
      rep.id = id;
      rep.role = role;
      rep.importance = scores[ranked[r]];
      rep.coefficient = final_coefficient(weights, trace, id);
      rep.dominant_position = dominant_position(weights, trace, id);
      rep.start_share = rep.dominant_position == 0 ? 1.0 : 0.0;
      rep.projection = unembed_project(weights, get_neuron(weights, id).subvalue);
      out.push_back(std::move(rep));
    }
    return out;
  };
  return {build(ffn_idx, NeuronRole::kFfnValue), build(attn_idx, NeuronRole::kAttnValue)};
}

std::vector<double> all_query_scores(const TransformerWeights& weights, const InferenceTrace& trace,
                                     const std::vector<NeuronId>& attn_value_neurons) {
  const ModelConfig& c = weights.config;
  if (attn_value_neurons.empty()) throw InputError("query scores: empty attention value neuron list");
  // Σ of subkeys of value neurons strictly above each layer
  std::vector<Vec> key_sum(static_cast<size_t>(c.n_layers), Vec::Zero(c.d_model));
  for (const auto& a : attn_value_neurons) {
    if (!a.is_attn()) throw InputError("query scores: " + to_string(a) + " is not an attention neuron");
    check_neuron(c, a);
    const Vec key = weights.layers[static_cast<size_t>(a.layer)].wv.row(a.head * c.d_head + a.index).transpose();
    for (int l = 0; l < a.layer; ++l) key_sum[static_cast<size_t>(l)] += key;
  }
  std::vector<double> out(static_cast<size_t>(ffn_neuron_count(c)));
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& L = weights.layers[static_cast<size_t>(l)];
    const Mat& m = trace.layers[static_cast<size_t>(l)].coefficients;
    const Eigen::RowVectorXf proj = key_sum[static_cast<size_t>(l)].transpose() * L.fc2;  // 1 x d_ffn
    for (int k = 0; k < c.d_ffn; ++k) {
      const int p = ffn_dominant(trace, l, k);
      out[static_cast<size_t>(l * c.d_ffn + k)] = static_cast<double>(m(p, k)) * proj[k];
    }
  }
  return out;
}

std::vector<NeuronReport> query_neuron_scores(const TransformerWeights& weights, const InferenceTrace& trace,
                                              const std::vector<NeuronId>& attn_value_neurons, size_t n) {
  if (n == 0) throw InputError("query_neuron_scores: n must be >= 1");
  const ModelConfig& c = weights.config;
  const auto scores = all_query_scores(weights, trace, attn_value_neurons);
  std::vector<double> key(scores.size());
  std::vector<size_t> idx(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) {
    key[i] = std::abs(scores[i]);
    idx[i] = i;
  }
  const auto ranked = rank_desc(idx, key);
  std::vector<NeuronReport> out;
  for (size_t r = 0; r < std::min(n, ranked.size()); ++r) {
    const size_t i = ranked[r];
    NeuronReport rep;
    rep.id = NeuronId::ffn(static_cast<int>(i) / c.d_ffn, static_cast<int>(i) % c.d_ffn);
    rep.role = NeuronRole::kFfnQuery;
    rep.query_score = scores[i];
    rep.dominant_position = ffn_dominant(trace, rep.id.layer, rep.id.index);
    rep.start_share = rep.dominant_position == 0 ? 1.0 : 0.0;
    rep.coefficient = trace.layers[static_cast<size_t>(rep.id.layer)].coefficients(rep.dominant_position, rep.id.index);
    rep.projection = unembed_project(weights, get_neuron(weights, rep.id).subvalue);
    out.push_back(std::move(rep));
  }
  return out;
}

double head_logit_score(const TransformerWeights& weights, const InferenceTrace& trace, int layer, int head,
                        TokenId target) {
  check_target(weights.config, target);
  const Vec out = head_output(weights, trace, layer, head, trace.last());
  const Vec base = row(trace.residual[static_cast<size_t>(layer)], trace.last());
  const Readout readout(weights);
  return readout.log_prob(dbl(base) + dbl(out), target) - readout.log_prob(dbl(base), target);
}

double head_causal_score(const TransformerWeights& weights, const Tokenizer& tokenizer,
                         const std::vector<PairedCase>& dataset, int layer, int head) {
  if (dataset.empty()) throw InputError("head_causal_score: empty dataset");
  const double before = entropy_difference_eval(weights, tokenizer, dataset).overall.mean_abs_entropy_diff;
  const double after =
      entropy_difference_eval(mask_head(weights, layer, head), tokenizer, dataset).overall.mean_abs_entropy_diff;
  return before - after;
}

std::vector<AnalysisCase> analysis_cases(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                         const std::vector<PairedCase>& pairs) {
  std::vector<std::optional<AnalysisCase>> slots(pairs.size());
  parallel_for(pairs.size(), [&](size_t i) {
    const auto& pair = pairs[i];
    const auto male_prompt = prompt_before_term(pair.male_sentence, pair.male_term);
    const auto female_prompt = prompt_before_term(pair.female_sentence, pair.female_term);
    if (!male_prompt || !female_prompt) return;
    auto side = [&](const std::string& prompt, const std::string& term) -> std::optional<std::pair<TokenId, double>> {
      if (prompt.empty() && !tokenizer.adds_bos()) return std::nullopt;
      const TokenId target = tokenizer.first_token(prompt.empty() ? term : " " + term);
      const auto trace = forward(weights, tokenizer.encode(prompt));
      return std::make_pair(target, static_cast<double>(trace.probs[target]));
    };
    const auto m = side(*male_prompt, pair.male_term);
    const auto f = side(*female_prompt, pair.female_term);
    if (!m || !f) return;
    if (m->second >= f->second) {
      slots[i] = AnalysisCase{*male_prompt, m->first};
    } else {
      slots[i] = AnalysisCase{*female_prompt, f->first};
    }
  });
  std::vector<AnalysisCase> out;
  for (auto& s : slots) {
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

AggregateImportance aggregate_importance(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                         const std::vector<AnalysisCase>& cases, size_t n) {
  if (cases.empty()) throw InputError("aggregate_importance: empty case list");
  if (n == 0) throw InputError("aggregate_importance: n must be >= 1");
  const ModelConfig& c = weights.config;
  const auto ids = all_neurons(c);

  std::vector<std::vector<double>> importance(cases.size());
  std::vector<std::vector<int>> positions(cases.size());
  std::vector<std::vector<float>> coefficients(cases.size());
  parallel_for(cases.size(), [&](size_t i) {
    const auto trace = trace_prompt(weights, tokenizer, cases[i].prompt);
    importance[i] = all_value_importances(weights, trace, cases[i].target);
    positions[i] = all_dominant_positions(weights, trace);
    auto& coef = coefficients[i];
    coef.reserve(ids.size());
    for (const auto& id : ids) coef.push_back(final_coefficient(weights, trace, id));
  });

  const auto n_cases = static_cast<double>(cases.size());
  std::vector<double> mean(ids.size(), 0.0);
  std::vector<double> mean_coef(ids.size(), 0.0);
  for (size_t i = 0; i < cases.size(); ++i) {
    for (size_t j = 0; j < ids.size(); ++j) {
      mean[j] += importance[i][j];
      mean_coef[j] += coefficients[i][j];
    }
  }
  for (size_t j = 0; j < ids.size(); ++j) {
    mean[j] /= n_cases;
    mean_coef[j] /= n_cases;
  }

  std::vector<size_t> ffn_idx, attn_idx;
  for (size_t j = 0; j < ids.size(); ++j) (ids[j].is_ffn() ? ffn_idx : attn_idx).push_back(j);

  auto report = [&](size_t j, NeuronRole role) {
    NeuronReport rep;
    rep.id = ids[j];
    rep.role = role;
    rep.importance = mean[j];
    rep.coefficient = static_cast<float>(mean_coef[j]);
    std::tie(rep.dominant_position, rep.start_share) = summarize_positions(positions, j);
    rep.projection = unembed_project(weights, get_neuron(weights, ids[j]).subvalue);
    return rep;
  };

  AggregateImportance out;
  const auto ffn_ranked = rank_desc(ffn_idx, mean);
  for (size_t r = 0; r < std::min(n, ffn_ranked.size()); ++r)
    out.ffn_value.push_back(report(ffn_ranked[r], NeuronRole::kFfnValue));
  const auto attn_ranked = rank_desc(attn_idx, mean);
  for (size_t r = 0; r < std::min(n, attn_ranked.size()); ++r)
    out.attn_value.push_back(report(attn_ranked[r], NeuronRole::kAttnValue));

  std::vector<NeuronId> attn_ids;
  for (const auto& rep : out.attn_value) attn_ids.push_back(rep.id);

  // query scores against the aggregated attention value neurons, mean |score|
  std::vector<std::vector<double>> query(cases.size());
  std::vector<std::vector<float>> query_coef(cases.size());
  parallel_for(cases.size(), [&](size_t i) {
    const auto trace = trace_prompt(weights, tokenizer, cases[i].prompt);
    query[i] = all_query_scores(weights, trace, attn_ids);
    auto& qc = query_coef[i];
    qc.resize(query[i].size());
    for (int l = 0; l < c.n_layers; ++l) {
      for (int k = 0; k < c.d_ffn; ++k) {
        const int p = ffn_dominant(trace, l, k);
        qc[static_cast<size_t>(l * c.d_ffn + k)] = trace.layers[static_cast<size_t>(l)].coefficients(p, k);
      }
    }
  });
  const size_t n_ffn = static_cast<size_t>(ffn_neuron_count(c));
  std::vector<double> q_abs(n_ffn, 0.0), q_signed(n_ffn, 0.0), q_coef(n_ffn, 0.0);
  for (size_t i = 0; i < cases.size(); ++i) {
    for (size_t k = 0; k < n_ffn; ++k) {
      q_abs[k] += std::abs(query[i][k]);
      q_signed[k] += query[i][k];
      q_coef[k] += query_coef[i][k];
    }
  }
  std::vector<size_t> q_idx(n_ffn);
  std::iota(q_idx.begin(), q_idx.end(), 0);
  const auto q_ranked = rank_desc(q_idx, q_abs);
  for (size_t r = 0; r < std::min(n, q_ranked.size()); ++r) {
    const size_t k = q_ranked[r];
    const NeuronId id = NeuronId::ffn(static_cast<int>(k) / c.d_ffn, static_cast<int>(k) % c.d_ffn);
    // position into the all_neurons() indexing
    const size_t j = static_cast<size_t>(id.layer) * static_cast<size_t>(c.d_ffn + c.n_heads * c.d_head) +
                     static_cast<size_t>(id.index);
    NeuronReport rep = report(j, NeuronRole::kFfnQuery);
    rep.importance = 0.0;
    rep.query_score = q_abs[k] / n_cases;
    rep.coefficient = static_cast<float>(q_coef[k] / n_cases);
    out.ffn_query.push_back(std::move(rep));
  }
  (void)q_signed;
  return out;
}

std::vector<std::pair<int, double>> neuron_frequency(const TransformerWeights& weights, const Tokenizer& tokenizer,
                                                     const std::vector<AnalysisCase>& cases,
                                                     const std::vector<int>& ks, int m) {
  if (cases.empty()) throw InputError("neuron_frequency: empty case list");
  const auto ids = all_neurons(weights.config);
  const int total = static_cast<int>(ids.size());
  if (m < 1 || m > total) throw InputError("neuron_frequency: M must be in [1, neuron count]");
  for (int k : ks) {
    if (k < 1 || k > m) throw InputError("neuron_frequency: need M >= K >= 1");
  }
  std::vector<size_t> all_idx(ids.size());
  std::iota(all_idx.begin(), all_idx.end(), 0);

  std::vector<std::vector<double>> importance(cases.size());
  std::vector<std::vector<char>> in_top(cases.size());
  parallel_for(cases.size(), [&](size_t i) {
    const auto trace = trace_prompt(weights, tokenizer, cases[i].prompt);
    importance[i] = all_value_importances(weights, trace, cases[i].target);
    const auto ranked = rank_desc(all_idx, importance[i]);
    in_top[i].assign(ids.size(), 0);
    for (int r = 0; r < m; ++r) in_top[i][ranked[static_cast<size_t>(r)]] = 1;
  });
  std::vector<double> mean(ids.size(), 0.0);
  std::vector<int> hits(ids.size(), 0);
  for (size_t i = 0; i < cases.size(); ++i) {
    for (size_t j = 0; j < ids.size(); ++j) {
      mean[j] += importance[i][j];
      hits[j] += in_top[i][j];
    }
  }
  for (auto& v : mean) v /= static_cast<double>(cases.size());
  const auto ranked = rank_desc(all_idx, mean);
  std::vector<std::pair<int, double>> curve;
  for (int k : ks) {
    double sum = 0.0;
    for (int r = 0; r < k; ++r) {
      sum += static_cast<double>(hits[ranked[static_cast<size_t>(r)]]) / static_cast<double>(cases.size());
    }
    curve.emplace_back(k, sum / k);
  }
  return curve;
}

std::vector<std::pair<int, int>> HeadGrid::top(size_t n) const {
  std::vector<std::pair<int, int>> cells;
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) cells.emplace_back(l, h);
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [&](const auto& a, const auto& b) { return at(a.first, a.second) > at(b.first, b.second); });
  if (cells.size() > n) cells.resize(n);
  return cells;
}

HeadGrid head_logit_grid(const TransformerWeights& weights, const Tokenizer& tokenizer,
                         const std::vector<AnalysisCase>& cases) {
  if (cases.empty()) throw InputError("head grid: empty case list");
  const ModelConfig& c = weights.config;
  HeadGrid grid{c.n_layers, c.n_heads, std::vector<double>(static_cast<size_t>(c.n_layers * c.n_heads), 0.0)};
  std::vector<std::vector<double>> per_case(cases.size());
  parallel_for(cases.size(), [&](size_t i) {
    const auto trace = trace_prompt(weights, tokenizer, cases[i].prompt);
    auto& s = per_case[i];
    for (int l = 0; l < c.n_layers; ++l) {
      for (int h = 0; h < c.n_heads; ++h) s.push_back(head_logit_score(weights, trace, l, h, cases[i].target));
    }
  });
  for (const auto& s : per_case) {
    for (size_t j = 0; j < s.size(); ++j) grid.scores[j] += s[j];
  }
  for (auto& v : grid.scores) v /= static_cast<double>(cases.size());
  return grid;
}

HeadGrid head_causal_grid(const TransformerWeights& weights, const Tokenizer& tokenizer,
                          const std::vector<PairedCase>& pairs) {
  if (pairs.empty()) throw InputError("head grid: empty pair set");
  const ModelConfig& c = weights.config;
  const double before = entropy_difference_eval(weights, tokenizer, pairs).overall.mean_abs_entropy_diff;
  HeadGrid grid{c.n_layers, c.n_heads, std::vector<double>(static_cast<size_t>(c.n_layers * c.n_heads), 0.0)};
  parallel_for(grid.scores.size(), [&](size_t j) {
    const int l = static_cast<int>(j) / c.n_heads;
    const int h = static_cast<int>(j) % c.n_heads;
    grid.scores[j] =
        before - entropy_difference_eval(mask_head(weights, l, h), tokenizer, pairs).overall.mean_abs_entropy_diff;
  });
  return grid;
}

}  // namespace nlens
