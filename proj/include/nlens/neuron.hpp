#pragma once

#include <compare>
#include <string>

namespace nlens {

enum class NeuronKind { kFfn = 0, kAttn = 1 };

// Address of one neuron. For FFN neurons `head` is always 0.
//
// Ordering is the canonical tie-break used by every ranking:
// layer ascending, FFN before attention, then head, then index.
struct NeuronId {
  NeuronKind kind = NeuronKind::kFfn;
  int layer = 0;
  int head = 0;
  int index = 0;

  static NeuronId ffn(int layer, int index) { return {NeuronKind::kFfn, layer, 0, index}; }
  static NeuronId attn(int layer, int head, int index) { return {NeuronKind::kAttn, layer, head, index}; }

  bool is_ffn() const { return kind == NeuronKind::kFfn; }
  bool is_attn() const { return kind == NeuronKind::kAttn; }

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
  friend std::strong_ordering operator<=>(const NeuronId& a, const NeuronId& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    if (auto c = static_cast<int>(a.kind) <=> static_cast<int>(b.kind); c != 0) return c;
    if (auto c = a.head <=> b.head; c != 0) return c;
    return a.index <=> b.index;
  }
};

// "ffn:3:17" / "attn:1:2:5"
std::string to_string(const NeuronId& id);
NeuronId parse_neuron_id(const std::string& text);

// Display label, e.g. "ffn L3 N17" or "attn L1H2 N5".
std::string label(const NeuronId& id);

}  // namespace nlens
