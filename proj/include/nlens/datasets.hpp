#pragma once

// Evaluation units and their JSON-lines files.
//
// pairs.jsonl  (schema 1): {"male": str, "female": str, "male_alt"?: str,
//                           "female_alt"?: str, "category"?: str, "word"?: str,
//                           "variant"?: int, "male_term"?: str, "female_term"?: str}
// stereo.jsonl (schema 1): {"stereotype": str, "anti_stereotype": str,
//                           "nonsensical": str, "domain"?: str}
// tasks.jsonl  (schema 1): {"kind": "mcq", "prompt": str, "choices": [str],
//                           "answer_index": int}
//                        | {"kind": "arithmetic", "prompt": str, "answer": str}

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nlens {

enum class Category { kTrait, kAction, kProfession, kHobby, kColor };

inline constexpr std::array<Category, 5> kCategories = {Category::kTrait, Category::kAction, Category::kProfession,
                                                         Category::kHobby, Category::kColor};

std::string to_string(Category c);
Category parse_category(const std::string& s);

struct PromptTemplate {
  Category category;
  int variant;  // 1..4
  std::string pattern;
};

// The four CommonWords prompts per category.
const std::vector<PromptTemplate>& commonwords_templates();

// Throws InputError unless the slots match the variant: one {Gender} for
// variants 1, 3 and 4; {Gender}, {Gender1} and {Gender2} once each for
// variant 2; the category word slot exactly once.
void validate_template(const PromptTemplate& t);

std::string render(const PromptTemplate& t, const std::string& word, const std::string& gender,
                   const std::string& gender1 = {}, const std::string& gender2 = {});

struct PairedCase {
  std::string male_sentence;
  std::string female_sentence;
  // Second rendering with the {Gender1}/{Gender2} order swapped (variant 2).
  std::optional<std::string> male_alt;
  std::optional<std::string> female_alt;
  std::string category;
  std::string word;
  int variant = 0;
  std::string male_term = "man";
  std::string female_term = "woman";
};

struct StereoCase {
  std::string stereotype;
  std::string anti_stereotype;
  std::string nonsensical;
  std::string domain;
};

enum class TaskKind { kMcq, kArithmetic };

struct TaskCase {
  TaskKind kind = TaskKind::kMcq;
  std::string prompt;
  std::vector<std::string> choices;
  int answer_index = 0;
  std::string answer;
};

using WordLists = std::map<Category, std::vector<std::string>>;

// One case per (word, template): |cases| = 4 * total words.
std::vector<PairedCase> generate_commonwords(const WordLists& words,
                                             const std::pair<std::string, std::string>& genders = {"man", "woman"});

// "a+b=" problems with `digits`-digit operands.
std::vector<TaskCase> generate_arithmetic(size_t n, uint64_t seed, int digits = 2);

std::vector<std::string> load_wordlist(const std::filesystem::path& path);
// Reads <category>.txt for every category present in `dir`.
WordLists load_wordlists(const std::filesystem::path& dir);

std::vector<PairedCase> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path, const std::vector<PairedCase>& pairs);
std::vector<StereoCase> read_stereo(const std::filesystem::path& path);
void write_stereo(const std::filesystem::path& path, const std::vector<StereoCase>& cases);
std::vector<TaskCase> read_tasks(const std::filesystem::path& path);
void write_tasks(const std::filesystem::path& path, const std::vector<TaskCase>& cases);

void validate(const StereoCase& c);
void validate(const TaskCase& c);

// Splits a paired sentence at its final gender term: the text before the
// term (trailing space dropped) is the prompt, " " + term is the target word.
// Returns nullopt when the term does not occur as a whole word.
std::optional<std::string> prompt_before_term(const std::string& sentence, const std::string& term);

// 16 hex digits of FNV-1a over a file's bytes; used in run manifests.
std::string file_hash(const std::filesystem::path& path);

}  // namespace nlens
