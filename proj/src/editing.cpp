#include "nlens/editing.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "nlens/parallel.hpp"

namespace nlens {

namespace {

void zero_neuron(TransformerWeights& w, const NeuronId& id) {
  auto& L = w.layers[static_cast<size_t>(id.layer)];
  if (id.is_ffn()) {
    L.fc1.row(id.index).setZero();
    if (w.config.gated()) L.gate.row(id.index).setZero();
    L.fc2.col(id.index).setZero();
  } else {
    const int k = id.head * w.config.d_head + id.index;
    L.wv.row(k).setZero();
    L.wo.col(k).setZero();
  }
}

// Comparable strength of a candidate's provenance, for deduplication.
double strength(const NeuronReport& r) { return r.role == NeuronRole::kFfnQuery ? std::abs(r.query_score) : r.importance; }

}  // namespace

TransformerWeights mask_neurons(const TransformerWeights& weights, std::span<const NeuronId> ids) {
  std::set<NeuronId> seen;
  for (const auto& id : ids) {
    check_neuron(weights.config, id);
    if (!seen.insert(id).second) throw InputError("duplicate neuron " + to_string(id) + " in mask set");
  }
  TransformerWeights out = weights;
  for (const auto& id : ids) zero_neuron(out, id);
  return out;
}

TransformerWeights mask_head(const TransformerWeights& weights, int layer, int head) {
  const ModelConfig& c = weights.config;
  if (layer < 0 || layer >= c.n_layers) throw InputError("mask_head: layer " + std::to_string(layer) + " out of range");
  if (head < 0 || head >= c.n_heads) throw InputError("mask_head: head " + std::to_string(head) + " out of range");
  TransformerWeights out = weights;
  out.layers[static_cast<size_t>(layer)].wo.middleCols(head * c.d_head, c.d_head).setZero();
  return out;
}

void EditPlan::validate() const {
  if (version != 1) throw InputError("edit plan: unsupported version " + std::to_string(version));
  if (neurons.size() > params.budget) throw InputError("edit plan: more neurons than the budget");
  std::set<NeuronId> seen;
  for (const auto& id : neurons) {
    if (!seen.insert(id).second) throw InputError("edit plan: duplicate neuron " + to_string(id));
  }
  std::map<NeuronId, const Candidate*> by_id;
  size_t selected = 0;
  for (const auto& c : candidates) {
    if (!by_id.emplace(c.id, &c).second) throw InputError("edit plan: duplicate candidate " + to_string(c.id));
    if (c.selected) {
      ++selected;
      if (c.filtered) throw InputError("edit plan: candidate " + to_string(c.id) + " is both filtered and selected");
      if (c.dominant_position == 0)
        throw InputError("edit plan: selected candidate " + to_string(c.id) + " sits at the start position");
    }
  }
  if (candidates.empty()) return;  // hand-written plan: a bare neuron list
  if (selected != neurons.size()) throw InputError("edit plan: selected candidates do not match the neuron list");
  for (size_t i = 0; i < neurons.size(); ++i) {
    auto it = by_id.find(neurons[i]);
    if (it == by_id.end() || !it->second->selected || it->second->rank != static_cast<int>(i))
      throw InputError("edit plan: neuron " + to_string(neurons[i]) + " has no matching selected candidate");
  }
}

std::vector<PairedCase> sample_pairs(const std::vector<PairedCase>& pairs, size_t n, uint64_t seed) {
  if (n >= pairs.size()) return pairs;
  std::vector<size_t> idx(pairs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates by hand: std::shuffle's output is implementation-defined
  for (size_t i = idx.size() - 1; i > 0; --i) {
    std::uniform_int_distribution<size_t> pick(0, i);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  std::vector<PairedCase> out;
  out.reserve(n);
  for (size_t i : idx) out.push_back(pairs[i]);
  return out;
}

EditPlan ine_select(const TransformerWeights& weights, const Tokenizer& tokenizer,
                    const std::vector<PairedCase>& commonwords, const std::vector<TaskCase>& capability_probe,
                    const IneParams& params) {
  if (commonwords.empty()) throw InputError("ine: empty commonwords dataset");
  if (capability_probe.empty()) throw InputError("ine: empty capability probe");
  if (params.n_per_role == 0) throw InputError("ine: n_per_role must be >= 1");
  if (params.budget == 0) throw InputError("ine: budget must be >= 1");
  if (params.bias_sample_size == 0) throw InputError("ine: bias_sample_size must be >= 1");

  EditPlan plan;
  plan.params = params;
  plan.model_hash = weights_hash(weights);

  // Step 1: identify
  const auto cases = analysis_cases(weights, tokenizer, commonwords);
  if (cases.empty()) throw InputError("ine: no commonwords pair yields an analysis case");
  const auto agg = aggregate_importance(weights, tokenizer, cases, params.n_per_role);

  std::map<NeuronId, NeuronReport> merged;
  for (const auto* list : {&agg.ffn_value, &agg.attn_value, &agg.ffn_query}) {
    for (const auto& r : *list) {
      auto [it, inserted] = merged.emplace(r.id, r);
      if (!inserted && strength(r) > strength(it->second)) it->second = r;
    }
  }
  for (const auto& [id, r] : merged) {
    Candidate c;
    c.id = id;
    c.source = r.role;
    c.importance = r.role == NeuronRole::kFfnQuery ? r.query_score : r.importance;
    c.dominant_position = r.dominant_position;
    c.start_share = r.start_share;
    plan.candidates.push_back(std::move(c));
  }

  // Step 2: drop neurons that act from the start position
  std::vector<size_t> survivors;
  for (size_t i = 0; i < plan.candidates.size(); ++i) {
    auto& c = plan.candidates[i];
    if (c.dominant_position == 0) {
      c.filtered = true;
      c.reason = kReasonStart;
    } else {
      survivors.push_back(i);
    }
  }
  if (survivors.empty()) throw InputError("ine: every candidate was filtered at the start position");

  // Step 3: mask each survivor alone
  const auto sample = sample_pairs(commonwords, params.bias_sample_size, params.seed);
  plan.baseline_bias = entropy_difference_eval(weights, tokenizer, sample).overall.mean_abs_entropy_diff;
  plan.baseline_accuracy = task_accuracy(weights, tokenizer, capability_probe).accuracy;
  parallel_for(survivors.size(), [&](size_t s) {
    auto& c = plan.candidates[survivors[s]];
    const NeuronId ids[] = {c.id};
    const auto masked = mask_neurons(weights, ids);
    c.evaluated = true;
    c.bias_delta =
        plan.baseline_bias - entropy_difference_eval(masked, tokenizer, sample).overall.mean_abs_entropy_diff;
    c.capability_delta = task_accuracy(masked, tokenizer, capability_probe).accuracy - plan.baseline_accuracy;
  });

  std::vector<size_t> ranked;
  for (size_t i : survivors) {
    auto& c = plan.candidates[i];
    if (-c.capability_delta > params.capability_drop_threshold) {
      c.filtered = true;
      c.reason = kReasonCapability;
    } else if (!(c.bias_delta > params.min_bias_reduction)) {
      c.filtered = true;
      c.reason = kReasonNoReduction;
    } else {
      ranked.push_back(i);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](size_t a, size_t b) {
    return plan.candidates[a].bias_delta > plan.candidates[b].bias_delta;
  });
  for (size_t r = 0; r < ranked.size(); ++r) {
    auto& c = plan.candidates[ranked[r]];
    if (r < params.budget) {
      c.selected = true;
      c.rank = static_cast<int>(r);
      plan.neurons.push_back(c.id);
    } else {
      c.reason = kReasonBudget;
    }
  }
  plan.validate();
  return plan;
}

TransformerWeights apply_plan(const TransformerWeights& weights, const EditPlan& plan) {
  plan.validate();
  if (!plan.model_hash.empty() && plan.model_hash != weights_hash(weights))
    throw InputError("edit plan was built for model " + plan.model_hash + ", not " + weights_hash(weights));
  return mask_neurons(weights, plan.neurons);
}

std::vector<CnaRow> cna_compare(const TransformerWeights& weights, std::span<const NeuronId> mask_ids,
                                std::span<const TokenId> prompt, std::span<const NeuronId> watch_ids) {
  if (watch_ids.empty()) throw InputError("cna: empty watch list");
  for (const auto& id : watch_ids) {
    check_neuron(weights.config, id);
    if (std::find(mask_ids.begin(), mask_ids.end(), id) != mask_ids.end())
      throw InputError("cna: watched neuron " + to_string(id) + " is also masked");
  }
  const auto masked = mask_neurons(weights, mask_ids);
  const auto before = forward(weights, prompt);
  const auto after = forward(masked, prompt);
  std::vector<CnaRow> rows;
  for (const auto& id : watch_ids) {
    CnaRow row;
    row.neuron = id;
    row.coef_before = neuron_contribution(weights, before, id, before.last()).coefficient;
    row.coef_after = neuron_contribution(masked, after, id, after.last()).coefficient;
    row.projection = unembed_project(weights, get_neuron(weights, id).subvalue);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace nlens
