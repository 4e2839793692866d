#pragma once

// Byte-level BPE in the GPT-2 layout: vocab.json maps byte-remapped token
// strings to ids, merges.txt lists merge rules in rank order.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nlens/config.hpp"

namespace nlens {

class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(std::unordered_map<std::string, TokenId> vocab, std::vector<std::pair<std::string, std::string>> merges,
            TokenId bos_id = -1);

  static Tokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt,
                        TokenId bos_id = -1);
  // Expects vocab.json and merges.txt inside `dir`.
  static Tokenizer load_dir(const std::filesystem::path& dir, TokenId bos_id = -1);

  // 256 single-byte tokens (id = byte value), then merges that make each
  // listed word a single token, then "<|bos|>".
  static Tokenizer from_words(const std::vector<std::string>& words);

  void save_dir(const std::filesystem::path& dir) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  // Raw bytes of a single token; bos decodes to "".
  std::string token_text(TokenId id) const;
  // Id of `text` if it is exactly one token.
  std::optional<TokenId> find_token(std::string_view text) const;
  // First token of encode(text) without bos; the convention used for target words.
  TokenId first_token(std::string_view text) const;

  int vocab_size() const { return static_cast<int>(id_to_token_.size()); }
  TokenId bos_id() const { return bos_id_; }
  bool adds_bos() const { return bos_id_ >= 0; }
  void set_bos(TokenId id);

  // GPT-2 style pre-tokenization, exposed for tests.
  static std::vector<std::string_view> pretokenize(std::string_view text);

 private:
  std::vector<std::string> bpe(std::string_view piece) const;

  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_token_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> merge_rank_;
  TokenId bos_id_ = -1;
};

}  // namespace nlens
