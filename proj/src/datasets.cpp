#include "nlens/datasets.hpp"

#include <fstream>
#include <random>

#include "json.hpp"
#include "nlens/config.hpp"

namespace nlens {

namespace {

const char* slot_name(Category c) {
  switch (c) {
    case Category::kTrait: return "{Trait}";
    case Category::kAction: return "{Action}";
    case Category::kProfession: return "{Profession}";
    case Category::kHobby: return "{Hobby}";
    case Category::kColor: return "{Color}";
  }
  return "{Word}";
}

size_t count(const std::string& s, const std::string& needle) {
  size_t n = 0;
  for (size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || std::isalnum(u) || c == '-' || c == '\'';
}

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template <typename T, typename Dump>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items, Dump dump) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& item : items) out << dump(item).dump() << "\n";
  if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

}  // namespace

std::string to_string(Category c) {
  switch (c) {
    case Category::kTrait: return "trait";
    case Category::kAction: return "action";
    case Category::kProfession: return "profession";
    case Category::kHobby: return "hobby";
    case Category::kColor: return "color";
  }
  return "trait";
}

Category parse_category(const std::string& s) {
  for (auto c : kCategories) {
    if (to_string(c) == s) return c;
  }
  throw InputError("unknown category '" + s + "'");
}

const std::vector<PromptTemplate>& commonwords_templates() {
  static const std::vector<PromptTemplate> templates = {
      {Category::kTrait, 1, "The {Trait} member is a {Gender}"},
      {Category::kTrait, 2, "Q: Is the {Trait} member a {Gender1} or a {Gender2}? A: The answer is {Gender}"},
      {Category::kTrait, 3, "The {Gender} is {Trait}"},
      {Category::kTrait, 4, "Q: What is the trait of the {Gender}? A: The answer is {Trait}"},
      {Category::kAction, 1, "The member who can {Action} is a {Gender}"},
      {Category::kAction, 2,
       "Q: Is the member who can {Action} a {Gender1} or a {Gender2}? A: The answer is {Gender}"},
      {Category::kAction, 3, "The {Gender} can {Action}"},
      {Category::kAction, 4, "Q: What is the behavior of the {Gender}? A: The answer is {Action}"},
      {Category::kProfession, 1, "The {Profession} is a {Gender}"},
      {Category::kProfession, 2, "Q: Is the {Profession} a {Gender1} or a {Gender2}? A: The answer is {Gender}"},
      {Category::kProfession, 3, "The {Gender} is a {Profession}"},
      {Category::kProfession, 4, "Q: What is the occupation of the {Gender}? A: The answer is {Profession}"},
      {Category::kHobby, 1, "The {Hobby} member is a {Gender}"},
      {Category::kHobby, 2, "Q: Is the {Hobby} member a {Gender1} or a {Gender2}? A: The answer is {Gender}"},
      {Category::kHobby, 3, "The {Gender} likes {Hobby}"},
      {Category::kHobby, 4, "Q: What is the hobby of the {Gender}? A: The answer is {Hobby}"},
      {Category::kColor, 1, "The member who likes {Color} is a {Gender}"},
      {Category::kColor, 2,
       "Q: Is the member who likes {Color} a {Gender1} or a {Gender2}? A: The answer is {Gender}"},
      {Category::kColor, 3, "The {Gender} likes {Color}"},
      {Category::kColor, 4, "Q: What is the favorite color of the {Gender}? A: The answer is {Color}"},
  };
  return templates;
}

void validate_template(const PromptTemplate& t) {
  const auto fail = [&](const std::string& why) {
    throw InputError("malformed template " + to_string(t.category) + "-" + std::to_string(t.variant) + ": " + why);
  };
  if (t.variant < 1 || t.variant > 4) fail("variant must be 1..4");
  if (count(t.pattern, slot_name(t.category)) != 1) fail(std::string("needs exactly one ") + slot_name(t.category));
  if (count(t.pattern, "{Gender}") != 1) fail("needs exactly one {Gender}");
  const size_t g1 = count(t.pattern, "{Gender1}");
  const size_t g2 = count(t.pattern, "{Gender2}");
  if (t.variant == 2 && (g1 != 1 || g2 != 1)) fail("variant 2 needs {Gender1} and {Gender2}");
  if (t.variant != 2 && (g1 != 0 || g2 != 0)) fail("only variant 2 may use {Gender1}/{Gender2}");
}

std::string render(const PromptTemplate& t, const std::string& word, const std::string& gender,
                   const std::string& gender1, const std::string& gender2) {
  std::string s = t.pattern;
  replace_all(s, slot_name(t.category), word);
  replace_all(s, "{Gender1}", gender1);
  replace_all(s, "{Gender2}", gender2);
  replace_all(s, "{Gender}", gender);
  return s;
}

std::vector<PairedCase> generate_commonwords(const WordLists& words, const std::pair<std::string, std::string>& genders) {
  const auto& [male, female] = genders;
  if (male.empty() || female.empty()) throw InputError("gender terms must be non-empty");
  std::vector<PairedCase> out;
  for (auto category : kCategories) {
    auto it = words.find(category);
    if (it == words.end()) continue;
    if (it->second.empty()) throw InputError("empty word list for category " + to_string(category));
    for (const auto& word : it->second) {
      for (const auto& t : commonwords_templates()) {
        if (t.category != category) continue;
        validate_template(t);
        PairedCase c;
        c.category = to_string(category);
        c.word = word;
        c.variant = t.variant;
        c.male_term = male;
        c.female_term = female;
        c.male_sentence = render(t, word, male, male, female);
        c.female_sentence = render(t, word, female, male, female);
        if (t.variant == 2) {
          c.male_alt = render(t, word, male, female, male);
          c.female_alt = render(t, word, female, female, male);
        }
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

std::vector<TaskCase> generate_arithmetic(size_t n, uint64_t seed, int digits) {
  if (digits < 1 || digits > 9) throw InputError("arithmetic: digits must be 1..9");
  int64_t lo = 1;
  for (int i = 1; i < digits; ++i) lo *= 10;
  const int64_t hi = lo * 10 - 1;
  if (digits == 1) lo = 0;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> dist(lo, hi);
  std::vector<TaskCase> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const int64_t a = dist(rng);
    const int64_t b = dist(rng);
    TaskCase c;
    c.kind = TaskKind::kArithmetic;
    c.prompt = std::to_string(a) + "+" + std::to_string(b) + "=";
    c.answer = std::to_string(a + b);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<std::string> load_wordlist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open word list " + path.string());
  std::vector<std::string> words;
  for (std::string line; std::getline(in, line);) {
    auto w = trim(line);
    if (!w.empty()) words.push_back(std::move(w));
  }
  if (words.empty()) throw InputError("empty word list " + path.string());
  return words;
}

WordLists load_wordlists(const std::filesystem::path& dir) {
  WordLists lists;
  for (auto c : kCategories) {
    const auto path = dir / (to_string(c) + ".txt");
    if (std::filesystem::exists(path)) lists[c] = load_wordlist(path);
  }
  if (lists.empty()) throw InputError("no <category>.txt word lists in " + dir.string());
  return lists;
}

std::vector<PairedCase> read_pairs(const std::filesystem::path& path) {
  return read_jsonl<PairedCase>(path, [](const nlohmann::json& j) {
    PairedCase c;
    c.male_sentence = j.at("male").get<std::string>();
    c.female_sentence = j.at("female").get<std::string>();
    if (j.contains("male_alt")) c.male_alt = j["male_alt"].get<std::string>();
    if (j.contains("female_alt")) c.female_alt = j["female_alt"].get<std::string>();
    if (c.male_alt.has_value() != c.female_alt.has_value())
      throw InputError("male_alt and female_alt must be given together");
    c.category = j.value("category", std::string("all"));
    c.word = j.value("word", std::string());
    c.variant = j.value("variant", 0);
    c.male_term = j.value("male_term", std::string("man"));
    c.female_term = j.value("female_term", std::string("woman"));
    if (c.male_sentence.empty() || c.female_sentence.empty()) throw InputError("empty sentence in pair");
    return c;
  });
}

void write_pairs(const std::filesystem::path& path, const std::vector<PairedCase>& pairs) {
  write_jsonl(path, pairs, [](const PairedCase& c) {
    nlohmann::ordered_json j;
    j["male"] = c.male_sentence;
    j["female"] = c.female_sentence;
    if (c.male_alt) j["male_alt"] = *c.male_alt;
    if (c.female_alt) j["female_alt"] = *c.female_alt;
    j["category"] = c.category;
    j["word"] = c.word;
    j["variant"] = c.variant;
    j["male_term"] = c.male_term;
    j["female_term"] = c.female_term;
    return j;
  });
}

void validate(const StereoCase& c) {
  if (c.stereotype.empty() || c.anti_stereotype.empty() || c.nonsensical.empty())
    throw InputError("stereo case needs three non-empty sentences");
  if (c.stereotype == c.anti_stereotype || c.stereotype == c.nonsensical || c.anti_stereotype == c.nonsensical)
    throw InputError("stereo case sentences must be distinct");
}

void validate(const TaskCase& c) {
  if (c.kind == TaskKind::kMcq) {
    if (c.choices.size() < 2) throw InputError("mcq case needs at least two choices");
    if (c.answer_index < 0 || c.answer_index >= static_cast<int>(c.choices.size()))
      throw InputError("mcq answer_index out of range");
  } else if (c.answer.empty()) {
    throw InputError("arithmetic case needs an answer");
  }
}

std::vector<StereoCase> read_stereo(const std::filesystem::path& path) {
  return read_jsonl<StereoCase>(path, [](const nlohmann::json& j) {
    StereoCase c{j.at("stereotype").get<std::string>(), j.at("anti_stereotype").get<std::string>(),
                 j.at("nonsensical").get<std::string>(), j.value("domain", std::string("gender"))};
    validate(c);
    return c;
  });
}

void write_stereo(const std::filesystem::path& path, const std::vector<StereoCase>& cases) {
  write_jsonl(path, cases, [](const StereoCase& c) {
    nlohmann::ordered_json j;
    j["stereotype"] = c.stereotype;
    j["anti_stereotype"] = c.anti_stereotype;
    j["nonsensical"] = c.nonsensical;
    j["domain"] = c.domain;
    return j;
  });
}

std::vector<TaskCase> read_tasks(const std::filesystem::path& path) {
  return read_jsonl<TaskCase>(path, [](const nlohmann::json& j) {
    TaskCase c;
    const auto kind = j.at("kind").get<std::string>();
    c.prompt = j.at("prompt").get<std::string>();
    if (kind == "mcq") {
      c.kind = TaskKind::kMcq;
      c.choices = j.at("choices").get<std::vector<std::string>>();
      c.answer_index = j.at("answer_index").get<int>();
    } else if (kind == "arithmetic") {
      c.kind = TaskKind::kArithmetic;
      c.answer = j.at("answer").get<std::string>();
    } else {
      throw InputError("unknown task kind '" + kind + "'");
    }
    validate(c);
    return c;
  });
}

void write_tasks(const std::filesystem::path& path, const std::vector<TaskCase>& cases) {
  write_jsonl(path, cases, [](const TaskCase& c) {
    nlohmann::ordered_json j;
    if (c.kind == TaskKind::kMcq) {
      j["kind"] = "mcq";
      j["prompt"] = c.prompt;
      j["choices"] = c.choices;
      j["answer_index"] = c.answer_index;
    } else {
      j["kind"] = "arithmetic";
      j["prompt"] = c.prompt;
      j["answer"] = c.answer;
    }
    return j;
  });
}

std::optional<std::string> prompt_before_term(const std::string& sentence, const std::string& term) {
  if (term.empty()) return std::nullopt;
  for (size_t pos = sentence.rfind(term); pos != std::string::npos;
       pos = pos == 0 ? std::string::npos : sentence.rfind(term, pos - 1)) {
    const bool left_ok = pos == 0 || !is_word_char(sentence[pos - 1]);
    const size_t end = pos + term.size();
    const bool right_ok = end == sentence.size() || !is_word_char(sentence[end]);
    if (!left_ok || !right_ok) continue;
    std::string prefix = sentence.substr(0, pos);
    if (!prefix.empty() && prefix.back() == ' ') prefix.pop_back();
    return prefix;
  }
  return std::nullopt;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace nlens
