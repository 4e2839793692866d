#include "nlens/safetensors.hpp"

#include <bit>
#include <algorithm>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "nlens/config.hpp"

namespace nlens::safetensors {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

int64_t Tensor::numel() const {
  int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

const Tensor* File::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

float half_to_float(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  uint32_t exp = (h >> 10) & 0x1fu;
  uint32_t mant = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize
      exp = 127 - 15 + 1;
      while ((mant & 0x400u) == 0) {
        mant <<= 1;
        --exp;
      }
      mant &= 0x3ffu;
      bits = sign | (exp << 23) | (mant << 13);
    }
  } else if (exp == 0x1f) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(bits);
}

float bfloat_to_float(uint16_t b) { return std::bit_cast<float>(static_cast<uint32_t>(b) << 16); }

namespace {

uint64_t read_header_len(std::ifstream& in, const std::filesystem::path& path) {
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw InputError("container " + path.string() + ": truncated header length");
  if (len > (uint64_t{1} << 30)) throw InputError("container " + path.string() + ": header too large");
  return len;
}

size_t dtype_size(const std::string& dtype) {
  if (dtype == "F32") return 4;
  if (dtype == "F16" || dtype == "BF16") return 2;
  return 0;
}

}  // namespace

std::string read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open container " + path.string());
  const uint64_t len = read_header_len(in, path);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError("container " + path.string() + ": truncated header");
  return header;
}

File read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open container " + path.string());
  const uint64_t len = read_header_len(in, path);
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw InputError("container " + path.string() + ": truncated header");

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("container " + path.string() + ": bad header: " + e.what());
  }

  in.seekg(0, std::ios::end);
  const uint64_t payload_size = static_cast<uint64_t>(in.tellg()) - 8 - len;
  const uint64_t payload_start = 8 + len;

  struct Entry {
    std::string name;
    uint64_t begin;
    uint64_t end;
    Tensor tensor;
  };
  std::vector<Entry> entries;
  File file;
  for (const auto& [name, info] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : info.items()) {
        file.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
      continue;
    }
    Entry e;
    e.name = name;
    try {
      e.tensor.stored_dtype = info.at("dtype").get<std::string>();
      e.tensor.shape = info.at("shape").get<std::vector<int64_t>>();
      const auto offsets = info.at("data_offsets").get<std::vector<uint64_t>>();
      if (offsets.size() != 2) throw InputError("tensor " + name + ": data_offsets must have two entries");
      e.begin = offsets[0];
      e.end = offsets[1];
    } catch (const nlohmann::json::exception& ex) {
      throw InputError("tensor " + name + ": bad header entry: " + ex.what());
    }
    const size_t width = dtype_size(e.tensor.stored_dtype);
    if (width == 0) throw InputError("tensor " + name + ": unsupported dtype " + e.tensor.stored_dtype);
    for (auto s : e.tensor.shape) {
      if (s < 0) throw InputError("tensor " + name + ": negative dimension");
    }
    if (e.end < e.begin || e.end > payload_size)
      throw InputError("tensor " + name + ": data_offsets outside payload");
    if (e.end - e.begin != static_cast<uint64_t>(e.tensor.numel()) * width)
      throw InputError("tensor " + name + ": byte length does not match shape and dtype");
    entries.push_back(std::move(e));
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.begin < b.begin; });

  std::vector<char> bytes;
  for (auto& e : entries) {
    bytes.resize(e.end - e.begin);
    in.seekg(static_cast<std::streamoff>(payload_start + e.begin));
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw InputError("tensor " + e.name + ": truncated payload");
    const auto n = static_cast<size_t>(e.tensor.numel());
    e.tensor.data.resize(n);
    if (e.tensor.stored_dtype == "F32") {
      std::memcpy(e.tensor.data.data(), bytes.data(), n * 4);
    } else {
      const bool half = e.tensor.stored_dtype == "F16";
      for (size_t i = 0; i < n; ++i) {
        uint16_t v;
        std::memcpy(&v, bytes.data() + 2 * i, 2);
        e.tensor.data[i] = half ? half_to_float(v) : bfloat_to_float(v);
      }
    }
    file.tensors.emplace_back(std::move(e.name), std::move(e.tensor));
  }
  return file;
}

void write(const std::filesystem::path& path, const File& file) {
  nlohmann::ordered_json header;
  if (!file.metadata.empty()) {
    nlohmann::ordered_json meta = nlohmann::ordered_json::object();
    for (const auto& [k, v] : file.metadata) meta[k] = v;
    header["__metadata__"] = meta;
  }
  uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    if (static_cast<size_t>(t.numel()) != t.data.size())
      throw std::invalid_argument("tensor " + name + ": data size does not match shape");
    const uint64_t bytes = t.data.size() * 4;
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  std::string text = header.dump();
  // pad so the payload starts 8-byte aligned
  while ((text.size() + 8) % 8 != 0) text.push_back(' ');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write container " + path.string());
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
  }
  out.flush();
  if (!out) throw std::runtime_error("I/O failure writing " + path.string());
}

}  // namespace nlens::safetensors
