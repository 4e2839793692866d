#include "nlens/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "json.hpp"

namespace nlens {

namespace {

std::string utf8(uint32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
  return s;
}

// GPT-2's reversible byte -> printable unicode table.
struct ByteTable {
  std::array<std::string, 256> encode;
  std::unordered_map<std::string, unsigned char> decode;

  ByteTable() {
    std::array<bool, 256> printable{};
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xa1; b <= 0xac; ++b) printable[b] = true;
    for (int b = 0xae; b <= 0xff; ++b) printable[b] = true;
    uint32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      const uint32_t cp = printable[b] ? static_cast<uint32_t>(b) : next++;
      encode[b] = utf8(cp);
      decode[encode[b]] = static_cast<unsigned char>(b);
    }
  }
};

const ByteTable& byte_table() {
  static const ByteTable table;
  return table;
}

std::string to_symbols(std::string_view raw) {
  std::string out;
  for (unsigned char c : raw) out += byte_table().encode[c];
  return out;
}

// Splits a byte-remapped token string into its per-byte symbols.
std::vector<std::string> split_symbols(std::string_view mapped) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < mapped.size()) {
    const auto c = static_cast<unsigned char>(mapped[i]);
    const size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : 4;
    out.emplace_back(mapped.substr(i, len));
    i += len;
  }
  return out;
}

enum class CharClass { kLetter, kNumber, kSpace, kOther };

struct CodeRange {
  uint32_t first, last;
};

#include "unicode_ranges.inc"

template <size_t N>
bool in_ranges(const CodeRange (&table)[N], uint32_t cp) {
  auto it = std::upper_bound(std::begin(table), std::end(table), cp,
                             [](uint32_t v, const CodeRange& r) { return v < r.first; });
  return it != std::begin(table) && cp <= std::prev(it)->last;
}

struct CodePoint {
  size_t offset = 0;
  size_t length = 1;
  CharClass cls = CharClass::kOther;
};

// Malformed UTF-8 bytes become one-byte "other" characters.
std::vector<CodePoint> decode_classes(std::string_view s) {
  std::vector<CodePoint> out;
  for (size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    size_t len = b < 0x80 ? 1 : (b >> 5) == 0x6 ? 2 : (b >> 4) == 0xe ? 3 : (b >> 3) == 0x1e ? 4 : 0;
    uint32_t cp = len == 1 ? b : len == 2 ? (b & 0x1fu) : len == 3 ? (b & 0x0fu) : (b & 0x07u);
    for (size_t k = 1; k < len; ++k) {
      const auto c = i + k < s.size() ? static_cast<unsigned char>(s[i + k]) : 0;
      if ((c >> 6) != 0x2) {
        len = 0;
        break;
      }
      cp = (cp << 6) | (c & 0x3fu);
    }
    CodePoint p{i, len == 0 ? 1 : len, CharClass::kOther};
    if (len != 0) {
      if (in_ranges(kLetterRanges, cp)) p.cls = CharClass::kLetter;
      else if (in_ranges(kNumberRanges, cp)) p.cls = CharClass::kNumber;
      else if (in_ranges(kSpaceRanges, cp)) p.cls = CharClass::kSpace;
    }
    out.push_back(p);
    i += p.length;
  }
  return out;
}

std::string merge_key(const std::string& a, const std::string& b) { return a + " " + b; }

}  // namespace

Tokenizer::Tokenizer(std::unordered_map<std::string, TokenId> vocab,
                     std::vector<std::pair<std::string, std::string>> merges, TokenId bos_id)
    : vocab_(std::move(vocab)), merges_(std::move(merges)) {
  TokenId max_id = -1;
  for (const auto& [tok, id] : vocab_) {
    if (id < 0) throw InputError("tokenizer: negative id for token '" + tok + "'");
    max_id = std::max(max_id, id);
  }
  id_to_token_.assign(static_cast<size_t>(max_id + 1), std::string());
  std::vector<bool> seen(static_cast<size_t>(max_id + 1), false);
  for (const auto& [tok, id] : vocab_) {
    if (seen[static_cast<size_t>(id)]) throw InputError("tokenizer: duplicate id " + std::to_string(id));
    seen[static_cast<size_t>(id)] = true;
    id_to_token_[static_cast<size_t>(id)] = tok;
  }
  for (size_t r = 0; r < merges_.size(); ++r) {
    merge_rank_.emplace(merge_key(merges_[r].first, merges_[r].second), static_cast<int>(r));
  }
  set_bos(bos_id);
}

void Tokenizer::set_bos(TokenId id) {
  if (id >= vocab_size()) throw InputError("tokenizer: bos id outside vocabulary");
  bos_id_ = id;
}

Tokenizer Tokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt,
                          TokenId bos_id) {
  std::ifstream vin(vocab_json);
  if (!vin) throw InputError("cannot open vocab " + vocab_json.string());
  nlohmann::json j;
  try {
    vin >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("vocab " + vocab_json.string() + ": " + e.what());
  }
  std::unordered_map<std::string, TokenId> vocab;
  for (const auto& [tok, id] : j.items()) vocab.emplace(tok, id.get<TokenId>());

  std::ifstream min(merges_txt);
  if (!min) throw InputError("cannot open merges " + merges_txt.string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  while (std::getline(min, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 == line.size())
      throw InputError("merges: malformed line '" + line + "'");
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return Tokenizer(std::move(vocab), std::move(merges), bos_id);
}

Tokenizer Tokenizer::load_dir(const std::filesystem::path& dir, TokenId bos_id) {
  return load(dir / "vocab.json", dir / "merges.txt", bos_id);
}

void Tokenizer::save_dir(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (size_t id = 0; id < id_to_token_.size(); ++id) j[id_to_token_[id]] = id;
  std::ofstream vout(dir / "vocab.json");
  vout << j.dump() << "\n";
  std::ofstream mout(dir / "merges.txt");
  mout << "#version: 0.2\n";
  for (const auto& [a, b] : merges_) mout << a << " " << b << "\n";
  if (!vout || !mout) throw std::runtime_error("cannot write tokenizer to " + dir.string());
}

Tokenizer Tokenizer::from_words(const std::vector<std::string>& words) {
  std::unordered_map<std::string, TokenId> vocab;
  for (int b = 0; b < 256; ++b) vocab.emplace(byte_table().encode[static_cast<size_t>(b)], b);
  Tokenizer tok(std::move(vocab), {}, -1);
  // Merge whatever BPE currently leaves of the word, left to right. A new
  // merge has the highest rank, so words finished earlier stay single tokens.
  for (const auto& word : words) {
    for (auto parts = tok.bpe(word); parts.size() > 1; parts = tok.bpe(word)) {
      std::string merged = parts[0] + parts[1];
      tok.merge_rank_.emplace(merge_key(parts[0], parts[1]), static_cast<int>(tok.merges_.size()));
      tok.merges_.emplace_back(parts[0], parts[1]);
      if (tok.vocab_.emplace(merged, tok.vocab_size()).second) tok.id_to_token_.push_back(std::move(merged));
    }
  }
  const TokenId bos = tok.vocab_size();
  tok.vocab_.emplace("<|bos|>", bos);
  tok.id_to_token_.emplace_back("<|bos|>");
  tok.set_bos(bos);
  return tok;
}

std::vector<std::string_view> Tokenizer::pretokenize(std::string_view s) {
  std::vector<std::string_view> out;
  const auto cps = decode_classes(s);
  const size_t n = cps.size();
  auto cls = [&](size_t k) { return cps[k].cls; };
  auto run = [&](size_t k, CharClass c) {
    while (k < n && cls(k) == c) ++k;
    return k;
  };
  auto piece = [&](size_t from, size_t to) {
    const size_t begin = cps[from].offset;
    const size_t end = to < n ? cps[to].offset : s.size();
    return s.substr(begin, end - begin);
  };
  size_t i = 0;
  while (i < n) {
    const size_t at = cps[i].offset;
    if (s[at] == '\'') {
      static constexpr std::array<std::string_view, 7> kSuffixes = {"s", "t", "re", "ve", "m", "ll", "d"};
      bool matched = false;
      for (auto suf : kSuffixes) {
        if (s.substr(at + 1, suf.size()) == suf) {
          out.push_back(s.substr(at, 1 + suf.size()));
          i += 1 + suf.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    size_t j = i;
    if (s[at] == ' ' && j + 1 < n && cls(j + 1) != CharClass::kSpace) ++j;
    const CharClass c = cls(j);
    if (c != CharClass::kSpace) {
      const size_t end = run(j, c);
      out.push_back(piece(i, end));
      i = end;
      continue;
    }
    // whitespace run: leave the last char for the following word unless at the end
    const size_t end = run(i, CharClass::kSpace);
    if (end == n || end - i == 1) {
      out.push_back(piece(i, end));
      i = end;
    } else {
      out.push_back(piece(i, end - 1));
      i = end - 1;
    }
  }
  return out;
}

std::vector<std::string> Tokenizer::bpe(std::string_view piece) const {
  std::vector<std::string> symbols = split_symbols(to_symbols(piece));
  while (symbols.size() > 1) {
    int best = std::numeric_limits<int>::max();
    for (size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = merge_rank_.find(merge_key(symbols[i], symbols[i + 1]));
      if (it != merge_rank_.end()) best = std::min(best, it->second);
    }
    if (best == std::numeric_limits<int>::max()) break;
    const auto& [a, b] = merges_[static_cast<size_t>(best)];
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == a && symbols[i + 1] == b) {
        next.push_back(a + b);
        i += 2;
      } else {
        next.push_back(std::move(symbols[i]));
        ++i;
      }
    }
    symbols = std::move(next);
  }
  return symbols;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  if (bos_id_ >= 0) ids.push_back(bos_id_);
  for (auto piece : pretokenize(text)) {
    for (const auto& sym : bpe(piece)) {
      auto it = vocab_.find(sym);
      if (it == vocab_.end()) throw InputError("tokenizer: symbol missing from vocabulary");
      ids.push_back(it->second);
    }
  }
  return ids;
}

std::string Tokenizer::token_text(TokenId id) const {
  if (id < 0 || id >= vocab_size()) throw InputError("tokenizer: unknown id " + std::to_string(id));
  if (id == bos_id_) return {};
  std::string out;
  for (const auto& sym : split_symbols(id_to_token_[static_cast<size_t>(id)])) {
    auto it = byte_table().decode.find(sym);
    if (it == byte_table().decode.end()) {
      out += sym;  // special tokens stored verbatim
    } else {
      out.push_back(static_cast<char>(it->second));
    }
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_text(id);
  return out;
}

std::optional<TokenId> Tokenizer::find_token(std::string_view text) const {
  auto it = vocab_.find(to_symbols(text));
  if (it == vocab_.end()) return std::nullopt;
  return it->second;
}

TokenId Tokenizer::first_token(std::string_view text) const {
  for (auto piece : pretokenize(text)) {
    const auto syms = bpe(piece);
    if (!syms.empty()) {
      auto it = vocab_.find(syms.front());
      if (it == vocab_.end()) throw InputError("tokenizer: symbol missing from vocabulary");
      return it->second;
    }
  }
  throw InputError("tokenizer: '" + std::string(text) + "' encodes to no tokens");
}

}  // namespace nlens
