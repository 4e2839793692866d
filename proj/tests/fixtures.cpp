#include "fixtures.hpp"

#include <algorithm>
#include <set>

#include "nlens/forward.hpp"

namespace fixtures {

namespace {

// Reserved coordinates of the planted bias model.
constexpr int kGender = 0;   // him minus her logit axis
constexpr int kShared = 1;   // raises him and her together
constexpr int kRelay = 2;    // start-token feature carried by attention
constexpr int kStart = 3;    // set only on the start token
constexpr int kWord = 4;     // set on every other token
constexpr int kMarker = 5;   // marker word via the capability neuron
constexpr int kDirect = 6;   // marker word via the embedding

// Embedding magnitude of the planted features; random layers grow the
// residual to norm ~5, so the features need to stand out after the norm.
constexpr float kFeature = 3.0f;

const char* const kMarkerWord = "zork";
const std::vector<std::string> kDistractors = {"blah", "quux", "fizz"};

void copy_row(Mat& m, TokenId from, TokenId to) { m.row(to) = m.row(from); }

std::vector<TokenId> word_ids(const Tokenizer& tok, const std::string& word) {
  return {*tok.find_token(word), *tok.find_token(" " + word)};
}

Vec unit(const Vec& v) { return v / v.norm(); }

}  // namespace

ModelConfig tiny_config(FfnFamily ffn, NormFamily norm, PositionFamily pos) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_head = 8;
  c.d_ffn = 32;
  c.vocab_size = 300;
  c.max_seq_len = 64;
  c.ffn_family = ffn;
  c.norm_family = norm;
  c.position_family = pos;
  c.activation = ffn == FfnFamily::kGated ? Activation::kSilu : Activation::kGelu;
  return c;
}

ModelConfig random_config(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ModelConfig c;
  c.n_layers = pick(2, 4);
  c.n_heads = 1 << pick(0, 2);
  c.d_head = 8 * pick(1, 4);
  while (c.n_heads * c.d_head > 128) c.d_head /= 2;
  c.d_model = c.n_heads * c.d_head;
  c.d_ffn = c.d_model * pick(1, 4);
  c.vocab_size = pick(50, 300);
  c.max_seq_len = 32;
  c.ffn_family = pick(0, 1) ? FfnFamily::kGated : FfnFamily::kSingleGate;
  c.norm_family = pick(0, 1) ? NormFamily::kRmsNorm : NormFamily::kLayerNorm;
  c.position_family = pick(0, 1) ? PositionFamily::kRotary : PositionFamily::kLearned;
  const Activation acts[] = {Activation::kGelu, Activation::kRelu, Activation::kSilu};
  c.activation = acts[pick(0, 2)];
  c.use_bias = pick(0, 1) == 1;
  return c;
}

std::vector<TokenId> random_prompt(std::mt19937_64& rng, int vocab, int length) {
  std::uniform_int_distribution<TokenId> tok(0, vocab - 1);
  std::vector<TokenId> out(static_cast<size_t>(length));
  for (auto& t : out) t = tok(rng);
  return out;
}

Tokenizer word_tokenizer(const std::vector<std::string>& words) {
  std::vector<std::string> all;
  std::set<std::string> seen;
  for (const auto& w : words) {
    for (const auto& v : {" " + w, w}) {
      if (seen.insert(v).second) all.push_back(v);
    }
  }
  return Tokenizer::from_words(all);
}

WordLists sample_wordlists() { return load_wordlists(NLENS_DATA_DIR "/wordlists"); }

std::vector<std::string> template_words() {
  std::vector<std::string> out = {"The", "member", "is", "a",        "Q", "Is",       "the",  "or",   "A",
                                  "answer", "who", "can", "What", "trait", "of", "behavior", "occupation", "likes",
                                  "hobby", "favorite", "color", "him", "her", "man", "woman", "which", "one",
                                  kMarkerWord};
  out.insert(out.end(), kDistractors.begin(), kDistractors.end());
  for (const auto& [cat, words] : sample_wordlists()) out.insert(out.end(), words.begin(), words.end());
  return out;
}

void reserve_coordinates(TransformerWeights& w, const std::vector<int>& coords) {
  for (int i : coords) {
    w.embed.col(i).setZero();
    if (w.pos_embed.size() > 0) w.pos_embed.col(i).setZero();
    w.unembed.col(i).setZero();
    for (auto& L : w.layers) {
      L.wo.row(i).setZero();
      L.fc2.row(i).setZero();
      L.bo[i] = 0.0f;
      L.fc2_bias[i] = 0.0f;
    }
  }
}

SymmetricModel symmetric_model(uint64_t seed, const ModelConfig& base) {
  SymmetricModel m;
  m.tokenizer = word_tokenizer(template_words());
  ModelConfig c = base;
  c.vocab_size = m.tokenizer.vocab_size();
  c.bos_token_id = m.tokenizer.bos_id();
  m.weights = random_model(c, seed);
  const auto him = word_ids(m.tokenizer, "him");
  const auto her = word_ids(m.tokenizer, "her");
  for (size_t i = 0; i < him.size(); ++i) {
    copy_row(m.weights.embed, him[i], her[i]);
    copy_row(m.weights.unembed, him[i], her[i]);
  }
  m.him = him[1];
  m.her = her[1];
  return m;
}

PlantedBias planted_bias_model(uint64_t seed, bool capability_neuron) {
  PlantedBias p;
  p.tokenizer = word_tokenizer(template_words());
  ModelConfig c = tiny_config(FfnFamily::kGated, NormFamily::kRmsNorm, PositionFamily::kRotary);
  c.vocab_size = p.tokenizer.vocab_size();
  c.bos_token_id = p.tokenizer.bos_id();
  TransformerWeights w = random_model(c, seed);
  reserve_coordinates(w, {kGender, kShared, kRelay, kStart, kWord, kMarker, kDirect});

  for (TokenId t = 0; t < c.vocab_size; ++t) {
    const bool start = t == c.bos_token_id;
    w.embed(t, kStart) = start ? kFeature : 0.0f;
    w.embed(t, kWord) = start ? 0.0f : kFeature;
    w.embed(t, kDirect) = capability_neuron ? 0.0f : kFeature;
  }
  const auto him = word_ids(p.tokenizer, "him");
  const auto her = word_ids(p.tokenizer, "her");
  for (size_t i = 0; i < him.size(); ++i) {
    copy_row(w.embed, him[i], her[i]);
    copy_row(w.unembed, him[i], her[i]);
    w.unembed(him[i], kGender) = 0.5f;
    w.unembed(her[i], kGender) = -0.5f;
    w.unembed(him[i], kShared) = w.unembed(her[i], kShared) = 1.0f;
  }
  p.him = him[1];
  p.her = her[1];
  p.marker = *p.tokenizer.find_token(std::string(" ") + kMarkerWord);

  auto fire_on = [](LayerWeights& L, int k, int coord) {
    L.gate.row(k).setZero();
    L.fc1.row(k).setZero();
    L.gate(k, coord) = 1.0f;
    L.fc1(k, coord) = 1.0f;
    L.fc2.col(k).setZero();
  };

  auto& L0 = w.layers[0];
  auto& L1 = w.layers[1];
  p.bias_neuron = NeuronId::ffn(1, 0);
  fire_on(L1, 0, kWord);
  L1.fc2(kGender, 0) = 1.0f;

  p.general_ffn = NeuronId::ffn(0, 0);
  fire_on(L0, 0, kStart);
  L0.fc2(kRelay, 0) = 2.0f;

  // head 1 of layer 1 attends uniformly and relays the start feature
  p.general_attn = NeuronId::attn(1, 1, 0);
  const int dh = c.d_head;
  L1.wq.middleRows(dh, dh).setZero();
  L1.wk.middleRows(dh, dh).setZero();
  L1.wv.row(dh).setZero();
  L1.wv(dh, kRelay) = 1.0f;
  L1.wo.col(dh).setZero();
  L1.wo(kShared, dh) = 3.0f;

  if (capability_neuron) {
    p.has_capability_neuron = true;
    p.capability_neuron = NeuronId::ffn(1, 1);
    fire_on(L1, 1, kWord);
    L1.fc2(kMarker, 1) = 0.6f;
    L1.fc2(kGender, 1) = 0.8f;
    w.unembed(p.marker, kMarker) = 3.0f;
  } else {
    w.unembed(p.marker, kDirect) = 3.0f;
  }
  p.weights = std::move(w);
  return p;
}

std::vector<PairedCase> commonwords(const std::string& male, const std::string& female) {
  return generate_commonwords(sample_wordlists(), {male, female});
}

std::vector<TaskCase> marker_probe(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto words = template_words();
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  std::vector<TaskCase> out;
  for (size_t i = 0; i < n; ++i) {
    TaskCase t;
    t.kind = TaskKind::kMcq;
    t.prompt = "Q: " + words[pick(rng)] + " " + words[pick(rng)] + "? A:";
    std::vector<std::string> choices = {std::string(" ") + kMarkerWord};
    for (const auto& d : kDistractors) choices.push_back(" " + d);
    for (size_t k = choices.size() - 1; k > 0; --k) {
      std::uniform_int_distribution<size_t> swap_with(0, k);
      std::swap(choices[k], choices[swap_with(rng)]);
    }
    t.answer_index = static_cast<int>(std::find(choices.begin(), choices.end(), std::string(" ") + kMarkerWord) -
                                      choices.begin());
    t.choices = std::move(choices);
    out.push_back(std::move(t));
  }
  return out;
}

PlantedNeuron planted_neuron(uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  ModelConfig c = tiny_config(pick(0, 1) ? FfnFamily::kGated : FfnFamily::kSingleGate,
                              pick(0, 1) ? NormFamily::kRmsNorm : NormFamily::kLayerNorm,
                              pick(0, 1) ? PositionFamily::kRotary : PositionFamily::kLearned);
  c.n_layers = pick(2, 3);
  c.vocab_size = 200;
  c.use_bias = pick(0, 1) == 1;

  PlantedNeuron p;
  p.weights = random_model(c, seed);
  p.tokens = random_prompt(rng, c.vocab_size, pick(4, 12));
  p.target = static_cast<TokenId>(pick(0, c.vocab_size - 1));
  const int layer = pick(0, c.n_layers - 1);
  const auto trace = forward(p.weights, p.tokens);
  const auto& lt = trace.layers[static_cast<size_t>(layer)];
  auto& L = p.weights.layers[static_cast<size_t>(layer)];
  const Vec direction = unit(p.weights.unembed.row(p.target).transpose());
  constexpr float kPre = 4.0f;
  constexpr float kStrength = 30.0f;

  if (pick(0, 1) == 0) {
    const int k = pick(0, c.d_ffn - 1);
    p.neuron = NeuronId::ffn(layer, k);
    const Vec x = lt.ffn_in.row(trace.last()).transpose();
    const Vec key = kPre * x / x.squaredNorm();
    L.fc1.row(k) = key.transpose();
    L.fc1_bias[k] = 0.0f;
    if (c.gated()) L.gate.row(k) = key.transpose();
    L.fc2.col(k) = kStrength * direction;
  } else {
    const int head = pick(0, c.n_heads - 1);
    const int k = pick(0, c.d_head - 1);
    p.neuron = NeuronId::attn(layer, head, k);
    const Mat& probs = lt.attn_probs[static_cast<size_t>(head)];
    Vec mixed = Vec::Zero(c.d_model);
    for (int pos = 0; pos <= trace.last(); ++pos) mixed += probs(trace.last(), pos) * lt.attn_in.row(pos).transpose();
    const int row = head * c.d_head + k;
    L.wv.row(row) = (kPre * mixed / mixed.squaredNorm()).transpose();
    L.bv[row] = 0.0f;
    L.wo.col(row) = kStrength / kPre * direction;
  }
  return p;
}

CnaChain cna_chain(uint64_t seed) {
  constexpr int kConst = 0, kRelayed = 1;
  CnaChain chain;
  ModelConfig c = tiny_config(FfnFamily::kGated, NormFamily::kRmsNorm, PositionFamily::kRotary);
  c.vocab_size = 120;
  TransformerWeights w = random_model(c, seed);
  reserve_coordinates(w, {kConst, kRelayed});
  w.embed.col(kConst).setOnes();

  auto& up = w.layers[0];
  up.gate.row(3).setZero();
  up.fc1.row(3).setZero();
  up.fc2.col(3).setZero();
  up.gate(3, kConst) = 0.5f;
  up.fc1(3, kConst) = 1.0f;
  up.fc2(kRelayed, 3) = 4.0f;

  auto& down = w.layers[1];
  down.gate.row(5).setZero();
  down.fc1.row(5).setZero();
  down.gate(5, kConst) = 0.5f;
  down.fc1(5, kRelayed) = 1.0f;
  down.fc1(5, kConst) = -0.5f;

  chain.weights = std::move(w);
  std::mt19937_64 rng(seed);
  chain.tokens = random_prompt(rng, c.vocab_size, 6);
  chain.upstream = NeuronId::ffn(0, 3);
  chain.downstream = NeuronId::ffn(1, 5);
  return chain;
}

}  // namespace fixtures
