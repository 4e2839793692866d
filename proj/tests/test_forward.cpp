#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "nlens/forward.hpp"
#include "oracle.hpp"

using namespace nlens;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const Vec& a, const std::vector<double>& b) {
  double m = 0;
  for (size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[static_cast<int>(i)]) - b[i]));
  return m;
}

double max_abs(const std::vector<double>& v) {
  double m = 1.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

TEST_CASE("converted checkpoints reproduce the reference implementation") {
  for (const char* name : {"gpt2", "llama"}) {
    CAPTURE(name);
    const fs::path dir = fs::path(NLENS_REFERENCE_DIR) / name;
    const auto config = load_config(dir / "config.json");
    const auto w = load_weights(dir / "model.safetensors", config);
    std::ifstream in(dir / "expected.json");
    const auto expected = nlohmann::json::parse(in);
    for (const auto& p : expected["prompts"]) {
      const auto tokens = p["tokens"].get<std::vector<TokenId>>();
      CAPTURE(tokens.size());
      const auto trace = forward(w, tokens);
      const auto residual = p["residual"].get<std::vector<std::vector<double>>>();
      for (size_t l = 0; l < residual.size(); ++l) {
        const Vec row = trace.residual[l].row(trace.last()).transpose();
        CHECK(max_abs_diff(row, residual[l]) < 1e-4 * max_abs(residual[l]));
      }
      const auto logits = p["logits"].get<std::vector<double>>();
      CHECK(max_abs_diff(trace.logits, logits) < 1e-4 * max_abs(logits));
    }
  }
}

TEST_CASE("forward matches the straight-loop oracle across families") {
  std::mt19937_64 rng(123);
  for (int i = 0; i < 25; ++i) {
    const ModelConfig c = fixtures::random_config(rng);
    CAPTURE(to_json(c).dump());
    const auto w = random_model(c, static_cast<uint64_t>(i));
    const auto tokens = fixtures::random_prompt(rng, c.vocab_size, 1 + static_cast<int>(rng() % 12));
    const auto trace = forward(w, tokens);
    const auto ref = oracle::run(w, tokens);
    CHECK(max_abs_diff(trace.logits, ref.logits) < 1e-4 * max_abs(ref.logits));
    for (int l = 0; l < c.n_layers; ++l) {
      const auto& st = ref.layers[static_cast<size_t>(l)];
      const auto& lt = trace.layers[static_cast<size_t>(l)];
      CHECK(max_abs_diff(lt.coefficients.row(trace.last()).transpose(), st.ffn_coef) < 1e-4 * max_abs(st.ffn_coef));
      CHECK(max_abs_diff(lt.attn_out.row(trace.last()).transpose(), st.attn) < 1e-4 * max_abs(st.attn));
    }
  }
}

TEST_CASE("residual stream telescopes and decomposes into neurons") {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 15; ++i) {
    const ModelConfig c = fixtures::random_config(rng);
    const auto w = random_model(c, 50 + static_cast<uint64_t>(i));
    const auto tokens = fixtures::random_prompt(rng, c.vocab_size, 2 + static_cast<int>(rng() % 10));
    const auto trace = forward(w, tokens);
    REQUIRE(trace.residual.size() == static_cast<size_t>(c.n_layers + 1));
    for (int l = 0; l < c.n_layers; ++l) {
      const auto& lt = trace.layers[static_cast<size_t>(l)];
      const auto& L = w.layers[static_cast<size_t>(l)];
      const Mat sum = trace.residual[static_cast<size_t>(l)] + lt.attn_out + lt.ffn_out;
      CHECK((sum - trace.residual[static_cast<size_t>(l) + 1]).cwiseAbs().maxCoeff() < 1e-4);
      for (int p = 0; p < trace.length(); ++p) {
        Vec ffn = L.fc2_bias;
        for (const auto& pc : ffn_neuron_contributions(w, trace, l, p)) ffn += pc.vector;
        CHECK((ffn - lt.ffn_out.row(p).transpose()).cwiseAbs().maxCoeff() < 1e-4);

        Vec attn = L.bo;
        for (int h = 0; h < c.n_heads; ++h) {
          const Vec head = head_output(w, trace, l, h, p);
          Vec from_neurons = Vec::Zero(c.d_model);
          for (const auto& pc : attn_neuron_contributions(w, trace, l, h, p)) from_neurons += pc.vector;
          CHECK((head - from_neurons).cwiseAbs().maxCoeff() < 1e-4);
          attn += head;
        }
        CHECK((attn - lt.attn_out.row(p).transpose()).cwiseAbs().maxCoeff() < 1e-4);
      }
      for (const auto& probs : lt.attn_probs) {
        for (int r = 0; r < probs.rows(); ++r) {
          CHECK(std::abs(probs.row(r).sum() - 1.0f) < 1e-6);
          // causal: no weight on later positions
          if (r + 1 < probs.cols()) CHECK(probs.row(r).tail(probs.cols() - r - 1).cwiseAbs().maxCoeff() == 0.0f);
        }
      }
    }
    CHECK(std::abs(trace.probs.cast<double>().sum() - 1.0) < 1e-6);
  }
}

TEST_CASE("neuron contribution sums source positions") {
  const auto w = random_model(fixtures::tiny_config(FfnFamily::kGated, NormFamily::kRmsNorm, PositionFamily::kRotary), 4);
  const std::vector<TokenId> tokens = {5, 9, 200, 17, 3};
  const auto trace = forward(w, tokens);
  const NeuronId a = NeuronId::attn(1, 2, 3);
  Vec expected = Vec::Zero(w.config.d_model);
  double coef = 0;
  for (const auto& pc : attn_neuron_contributions(w, trace, 1, 2, trace.last())) {
    if (pc.neuron == a) {
      expected += pc.vector;
      coef += pc.coefficient;
    }
  }
  const auto got = neuron_contribution(w, trace, a, trace.last());
  CHECK((got.vector - expected).cwiseAbs().maxCoeff() < 1e-5);
  CHECK(got.coefficient == doctest::Approx(coef).epsilon(1e-5));
  CHECK((got.vector - got.coefficient * w.layers[1].wo.col(2 * w.config.d_head + 3)).cwiseAbs().maxCoeff() < 1e-5);

  const auto f = neuron_contribution(w, trace, NeuronId::ffn(0, 7), 2);
  CHECK(f.coefficient == trace.layers[0].coefficients(2, 7));
}

TEST_CASE("next token log-probabilities agree with full forwards on prefixes") {
  const auto w = random_model(fixtures::tiny_config(), 8);
  const std::vector<TokenId> tokens = {1, 22, 33, 44, 5, 66};
  const auto lps = next_token_logprobs(w, tokens);
  REQUIRE(lps.size() == tokens.size() - 1);
  for (size_t t = 1; t < tokens.size(); ++t) {
    const auto trace = forward(w, std::span(tokens).first(t));
    const Vec ls = log_softmax(trace.logits);
    CHECK(lps[t - 1] == doctest::Approx(ls[tokens[t]]).epsilon(1e-4));
  }
}

TEST_CASE("greedy generation follows the argmax") {
  const auto w = random_model(fixtures::tiny_config(), 8);
  const std::vector<TokenId> prompt = {3, 4};
  const auto out = greedy_generate(w, prompt, 4);
  REQUIRE(out.size() == 4);
  std::vector<TokenId> seq = prompt;
  for (TokenId t : out) {
    Eigen::Index best;
    forward(w, seq).logits.maxCoeff(&best);
    CHECK(t == best);
    seq.push_back(t);
  }
}

TEST_CASE("char-normalized entropy") {
  const auto tok = fixtures::word_tokenizer(fixtures::template_words());
  ModelConfig c = fixtures::tiny_config();
  c.vocab_size = tok.vocab_size();
  c.bos_token_id = tok.bos_id();
  const auto w = random_model(c, 6);
  const std::string text = "The nurse is a man";
  const auto ids = tok.encode(text);
  double nll = 0;
  for (double lp : next_token_logprobs(w, ids)) nll -= lp;
  CHECK(char_normalized_entropy(w, tok, text) == doctest::Approx(nll / 18.0));
  CHECK(char_normalized_entropy(w, tok, text) > 0.0);
  CHECK(utf8_length("caf\xc3\xa9") == 4);
  CHECK_THROWS_AS(char_normalized_entropy(w, tok, ""), InputError);
}

TEST_CASE("invalid inputs are rejected") {
  const auto w = random_model(fixtures::tiny_config(), 1);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>{}), InputError);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>{0, w.config.vocab_size}), InputError);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>(static_cast<size_t>(w.config.max_seq_len) + 1, 0)), InputError);
  const auto trace = forward(w, std::vector<TokenId>{1, 2});
  CHECK_THROWS_AS(head_output(w, trace, 2, 0, 0), InputError);
  CHECK_THROWS_AS(head_output(w, trace, 0, 0, 2), InputError);
  CHECK_THROWS_AS(head_values(w, trace, 0, 4), InputError);
}
