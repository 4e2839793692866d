#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "nlens/attribution.hpp"
#include "nlens/forward.hpp"
#include "nlens/metrics.hpp"

using namespace nlens;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "nlens_bias_eval";
  fs::create_directories(dir);
  return dir / name;
}

// Independent entropy: summed next-token NLL over the byte count.
double entropy_oracle(const TransformerWeights& w, const Tokenizer& tok, const std::string& text) {
  const auto ids = tok.encode(text);
  double nll = 0.0;
  for (size_t t = 1; t < ids.size(); ++t) {
    const auto trace = forward(w, std::span(ids).first(t));
    nll -= log_softmax(trace.logits)[ids[t]];
  }
  size_t chars = 0;
  for (unsigned char c : text) chars += (c & 0xC0) != 0x80 ? 1 : 0;
  return nll / static_cast<double>(chars);
}

double credit(double a, double b) { return a < b ? 1.0 : a == b ? 0.5 : 0.0; }

}  // namespace

TEST_CASE("icat identity and boundaries") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double lms = u(rng), ss = u(rng);
    const double expected = ss <= 50.0 ? lms * ss / 50.0 : lms * (100.0 - ss) / 50.0;
    CHECK(icat(lms, ss) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(icat(lms, ss) == doctest::Approx(icat(lms, 100.0 - ss)).epsilon(1e-12));
    CHECK(icat(lms, ss) <= lms + 1e-12);
  }
  CHECK(icat(100.0, 50.0) == 100.0);
  CHECK(icat(73.0, 0.0) == 0.0);
  CHECK(icat(73.0, 100.0) == 0.0);
  CHECK(icat(0.0, 50.0) == 0.0);
}

TEST_CASE("pair summaries credit ties half and keep category order") {
  std::vector<PairedCase> pairs(6);
  const char* cats[] = {"profession", "trait", "profession", "trait", "color", "color"};
  for (size_t i = 0; i < pairs.size(); ++i) pairs[i].category = cats[i];
  std::vector<PairScore> scores = {{1.0, 2.0, true, ""}, {3.0, 3.0, true, ""}, {2.5, 2.0, true, ""},
                                   {1.0, 1.5, true, ""}, {0.0, 0.0, false, "bad"}, {2.0, 1.0, true, ""}};
  const auto m = summarize_pairs(pairs, scores);
  CHECK(m.n_excluded == 1);
  CHECK(m.overall.n_pairs == 5);
  CHECK(m.overall.proportion_male_lower == doctest::Approx(100.0 * 2.5 / 5.0));
  CHECK(m.overall.mean_abs_entropy_diff == doctest::Approx((1.0 + 0.0 + 0.5 + 0.5 + 1.0) / 5.0));
  CHECK(m.overall.signed_mean_entropy_diff == doctest::Approx((-1.0 + 0.0 + 0.5 - 0.5 + 1.0) / 5.0));
  REQUIRE(m.per_category.size() == 3);
  CHECK(m.per_category[0].category == "profession");
  CHECK(m.per_category[1].category == "trait");
  CHECK(m.per_category[2].category == "color");
  CHECK(m.per_category[0].proportion_male_lower == doctest::Approx(50.0));
  CHECK(m.per_category[1].proportion_male_lower == doctest::Approx(75.0));
  CHECK(m.per_category[2].n_pairs == 1);
  CHECK(m.per_category[2].proportion_male_lower == 0.0);
  CHECK(m.pairs.size() == 6);
}

TEST_CASE("entropy difference on the symmetric model is exactly neutral") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    const auto sym = fixtures::symmetric_model(seed);
    const auto pairs = fixtures::commonwords("him", "her");
    const auto m = entropy_difference_eval(sym.weights, sym.tokenizer, pairs);
    CHECK(m.n_excluded == 0);
    CHECK(m.overall.proportion_male_lower == 50.0);
    CHECK(m.overall.mean_abs_entropy_diff < 1e-6);
    for (const auto& c : m.per_category) CHECK(c.proportion_male_lower == 50.0);
    for (const auto& s : m.pairs) CHECK(s.male > 0.0);
  }
}

TEST_CASE("swapping genders mirrors the proportion") {
  const auto w = [] {
    auto sym = fixtures::symmetric_model(5);
    return std::make_pair(random_model(sym.weights.config, 77), sym.tokenizer);
  }();
  const auto forward_pairs = fixtures::commonwords("him", "her");
  const auto swapped = fixtures::commonwords("her", "him");
  const auto a = entropy_difference_eval(w.first, w.second, forward_pairs);
  const auto b = entropy_difference_eval(w.first, w.second, swapped);
  CHECK(a.overall.proportion_male_lower == doctest::Approx(100.0 - b.overall.proportion_male_lower));
  CHECK(a.overall.mean_abs_entropy_diff == doctest::Approx(b.overall.mean_abs_entropy_diff));
  CHECK(a.overall.signed_mean_entropy_diff == doctest::Approx(-b.overall.signed_mean_entropy_diff));
  CHECK(winogender_eval(w.first, w.second, forward_pairs) == doctest::Approx(a.overall.mean_abs_entropy_diff));
}

TEST_CASE("pair scores average the swapped renderings") {
  const auto sym = fixtures::symmetric_model(9);
  const auto w = random_model(sym.weights.config, 31);
  for (const auto& p : fixtures::commonwords("man", "woman")) {
    if (p.variant != 2) continue;
    REQUIRE(p.male_alt.has_value());
    const auto s = score_pair(w, sym.tokenizer, p);
    REQUIRE(s.ok);
    const double male = 0.5 * (entropy_oracle(w, sym.tokenizer, p.male_sentence) +
                               entropy_oracle(w, sym.tokenizer, *p.male_alt));
    CHECK(s.male == doctest::Approx(male).epsilon(1e-5));
    break;
  }
  PairedCase empty;
  const auto bad = score_pair(w, sym.tokenizer, empty);
  CHECK_FALSE(bad.ok);
  CHECK_FALSE(bad.error.empty());
}

TEST_CASE("stereoset metrics follow the entropy comparisons") {
  const auto sym = fixtures::symmetric_model(4);
  const auto w = random_model(sym.weights.config, 12);
  const auto& tok = sym.tokenizer;
  const std::vector<std::string> words = fixtures::template_words();
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  auto sentence = [&] { return "The " + words[pick(rng)] + " is " + words[pick(rng)]; };
  std::vector<StereoCase> cases;
  double lms = 0, ss = 0;
  while (cases.size() < 40) {
    StereoCase c{sentence(), sentence(), sentence(), "gender"};
    if (c.stereotype == c.anti_stereotype || c.stereotype == c.nonsensical || c.anti_stereotype == c.nonsensical)
      continue;
    const double s = entropy_oracle(w, tok, c.stereotype);
    const double a = entropy_oracle(w, tok, c.anti_stereotype);
    const double n = entropy_oracle(w, tok, c.nonsensical);
    lms += credit(std::min(s, a), n);
    ss += credit(s, a);
    cases.push_back(c);
  }
  // one malformed case is excluded, not fatal
  cases.push_back({"same", "same", "other", "gender"});
  const auto m = stereoset_eval(w, tok, cases);
  CHECK(m.n_cases == 40);
  CHECK(m.n_excluded == 1);
  CHECK(m.lms == doctest::Approx(100.0 * lms / 40.0));
  CHECK(m.ss == doctest::Approx(100.0 * ss / 40.0));
  CHECK(m.icat == doctest::Approx(icat(m.lms, m.ss)));
  CHECK_THROWS_AS(stereoset_eval(w, tok, {}), InputError);
}

TEST_CASE("multiple choice accuracy on the planted marker") {
  const auto p = fixtures::planted_bias_model(1);
  const auto probe = fixtures::marker_probe(60, 5);
  const auto r = mcq_accuracy(p.weights, p.tokenizer, probe);
  CHECK(r.n_cases == 60);
  CHECK(r.accuracy == 100.0);
  CHECK(r.ties == 0);
  CHECK(task_accuracy(p.weights, p.tokenizer, probe).correct == 60);

  // Identical choices tie and the first index wins.
  TaskCase tie{TaskKind::kMcq, "Q: the", {" one", " one"}, 1, ""};
  const auto t = mcq_accuracy(p.weights, p.tokenizer, {tie});
  CHECK(t.ties == 1);
  CHECK(t.correct == 0);
  CHECK_THROWS_AS(mcq_accuracy(p.weights, p.tokenizer, {}), InputError);
  CHECK_THROWS_AS(mcq_accuracy(p.weights, p.tokenizer, generate_arithmetic(1, 1)), InputError);
}

TEST_CASE("arithmetic accuracy compares the greedy continuation") {
  const auto sym = fixtures::symmetric_model(2);
  const auto& w = sym.weights;
  const auto& tok = sym.tokenizer;
  auto cases = generate_arithmetic(12, 8);
  size_t expected = 0;
  for (size_t i = 0; i < cases.size(); ++i) {
    // Half the cases are rigged to the model's own greedy output.
    if (i % 2 == 0) {
      const auto n = tok.encode(cases[i].answer).size() - 1;
      const auto gen = greedy_generate(w, tok.encode(cases[i].prompt), static_cast<int>(n));
      const auto text = tok.decode(gen);
      const auto b = text.find_first_not_of(" \t\r\n");
      if (b == std::string::npos || tok.encode(text).size() != n + 1) continue;
      const auto e = text.find_last_not_of(" \t\r\n");
      cases[i].answer = text.substr(b, e - b + 1);
    }
    const auto gen = greedy_generate(w, tok.encode(cases[i].prompt),
                                     static_cast<int>(tok.encode(cases[i].answer).size() - 1));
    std::string out = tok.decode(gen);
    const auto b = out.find_first_not_of(" \t\r\n");
    out = b == std::string::npos ? "" : out.substr(b, out.find_last_not_of(" \t\r\n") - b + 1);
    expected += out == cases[i].answer ? 1 : 0;
  }
  const auto r = arithmetic_accuracy(w, tok, cases);
  CHECK(r.correct == expected);
  CHECK(r.correct >= 1);
  CHECK(r.accuracy == doctest::Approx(100.0 * static_cast<double>(expected) / 12.0));
}

TEST_CASE("commonwords generation and templates") {
  const auto words = fixtures::sample_wordlists();
  size_t total = 0;
  for (const auto& [cat, list] : words) total += list.size();
  const auto pairs = generate_commonwords(words);
  CHECK(pairs.size() == 4 * total);
  for (const auto& p : pairs) {
    CHECK(p.male_sentence != p.female_sentence);
    CHECK(p.male_alt.has_value() == (p.variant == 2));
    CHECK(prompt_before_term(p.male_sentence, "man").has_value());
    CHECK(prompt_before_term(p.female_sentence, "woman").has_value());
  }
  CHECK(commonwords_templates().size() == 20);
  for (const auto& t : commonwords_templates()) CHECK_NOTHROW(validate_template(t));

  const PromptTemplate v2{Category::kColor, 2, "{Color}: {Gender1} or {Gender2}? {Gender}"};
  CHECK(render(v2, "red", "man", "man", "woman") == "red: man or woman? man");
  CHECK_THROWS_AS(validate_template({Category::kColor, 1, "{Gender} likes {Trait}"}), InputError);
  CHECK_THROWS_AS(validate_template({Category::kColor, 1, "{Gender} {Gender} {Color}"}), InputError);
  CHECK_THROWS_AS(validate_template({Category::kColor, 2, "{Gender} {Color} {Gender1}"}), InputError);
  CHECK_THROWS_AS(validate_template({Category::kColor, 3, "{Gender} {Color} {Gender1} {Gender2}"}), InputError);
  CHECK_THROWS_AS(validate_template({Category::kColor, 5, "{Gender} {Color}"}), InputError);
  CHECK_THROWS_AS(generate_commonwords(words, {"", "woman"}), InputError);
  CHECK(parse_category(to_string(Category::kHobby)) == Category::kHobby);
  CHECK_THROWS_AS(parse_category("weather"), InputError);
}

TEST_CASE("prompt before the final whole-word term") {
  CHECK(prompt_before_term("The nurse is a woman", "woman") == "The nurse is a");
  CHECK(prompt_before_term("A man or a woman? A: man", "man") == "A man or a woman? A:");
  CHECK(prompt_before_term("woman", "woman") == "");
  CHECK_FALSE(prompt_before_term("The nurse is a woman", "man").has_value());
  CHECK_FALSE(prompt_before_term("anything", "").has_value());
}

TEST_CASE("arithmetic generation is seeded and correct") {
  const auto a = generate_arithmetic(50, 7, 3);
  const auto b = generate_arithmetic(50, 7, 3);
  REQUIRE(a.size() == 50);
  bool differs = false;
  const auto c = generate_arithmetic(50, 8, 3);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].prompt == b[i].prompt);
    differs = differs || a[i].prompt != c[i].prompt;
    const auto plus = a[i].prompt.find('+');
    const long x = std::stol(a[i].prompt.substr(0, plus));
    const long y = std::stol(a[i].prompt.substr(plus + 1));
    CHECK(x >= 100);
    CHECK(x <= 999);
    CHECK(a[i].prompt.back() == '=');
    CHECK(a[i].answer == std::to_string(x + y));
  }
  CHECK(differs);
  CHECK_THROWS_AS(generate_arithmetic(1, 1, 0), InputError);
  CHECK_THROWS_AS(generate_arithmetic(1, 1, 10), InputError);
}

TEST_CASE("jsonl files round trip and reject bad records") {
  auto pairs = fixtures::commonwords();
  pairs.resize(8);
  write_pairs(scratch("pairs.jsonl"), pairs);
  const auto back = read_pairs(scratch("pairs.jsonl"));
  REQUIRE(back.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].male_sentence == pairs[i].male_sentence);
    CHECK(back[i].female_alt == pairs[i].female_alt);
    CHECK(back[i].category == pairs[i].category);
    CHECK(back[i].variant == pairs[i].variant);
    CHECK(back[i].male_term == pairs[i].male_term);
  }

  const std::vector<StereoCase> stereo = {{"a b", "c d", "e f", "gender"}, {"x", "y", "z", "race"}};
  write_stereo(scratch("stereo.jsonl"), stereo);
  const auto sb = read_stereo(scratch("stereo.jsonl"));
  REQUIRE(sb.size() == 2);
  CHECK(sb[1].domain == "race");
  CHECK(sb[0].nonsensical == "e f");

  auto tasks = fixtures::marker_probe(3, 1);
  const auto arith = generate_arithmetic(2, 1);
  tasks.insert(tasks.end(), arith.begin(), arith.end());
  write_tasks(scratch("tasks.jsonl"), tasks);
  const auto tb = read_tasks(scratch("tasks.jsonl"));
  REQUIRE(tb.size() == 5);
  CHECK(tb[0].choices == tasks[0].choices);
  CHECK(tb[0].answer_index == tasks[0].answer_index);
  CHECK(tb[4].kind == TaskKind::kArithmetic);
  CHECK(tb[4].answer == tasks[4].answer);

  const auto bad = scratch("bad.jsonl");
  for (const char* line : {"{\"male\": \"a\"}", "not json", "{\"stereotype\": \"a\", \"anti_stereotype\": \"a\", "
                                                             "\"nonsensical\": \"b\"}",
                           "{\"kind\": \"mcq\", \"prompt\": \"p\", \"choices\": [\"a\"], \"answer_index\": 0}",
                           "{\"kind\": \"mcq\", \"prompt\": \"p\", \"choices\": [\"a\", \"b\"], \"answer_index\": 2}",
                           "{\"kind\": \"poem\", \"prompt\": \"p\"}"}) {
    std::ofstream(bad) << line << "\n";
    CAPTURE(line);
    CHECK_THROWS_AS(read_pairs(bad), InputError);
    CHECK_THROWS_AS(read_stereo(bad), InputError);
    CHECK_THROWS_AS(read_tasks(bad), InputError);
  }
  CHECK_THROWS_AS(read_pairs(scratch("missing.jsonl")), InputError);
}

TEST_CASE("file hashes are FNV-1a over the bytes") {
  const auto p = scratch("hash.bin");
  std::ofstream(p, std::ios::binary) << "";
  CHECK(file_hash(p) == "cbf29ce484222325");
  std::ofstream(p, std::ios::binary) << "a";
  CHECK(file_hash(p) == "af63dc4c8601ec8c");
  std::ofstream(p, std::ios::binary) << "foobar";
  CHECK(file_hash(p) == "85944171f73967e8");
  CHECK_THROWS_AS(file_hash(scratch("nope.bin")), InputError);
}

TEST_CASE("head causal scores vanish on the symmetric model") {
  const auto sym = fixtures::symmetric_model(6);
  auto pairs = fixtures::commonwords("him", "her");
  pairs.resize(20);
  const auto grid = head_causal_grid(sym.weights, sym.tokenizer, pairs);
  for (double s : grid.scores) CHECK(std::abs(s) < 1e-6);
}
