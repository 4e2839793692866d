#pragma once

// Flat tensor container: 8-byte little-endian header length, a JSON header
// mapping tensor name -> {dtype, shape, data_offsets}, then the raw payload.
// F32, F16 and BF16 payloads are accepted; everything is upcast to fp32.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace nlens::safetensors {

struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;
  std::string stored_dtype = "F32";

  int64_t numel() const;
};

struct File {
  // Tensors in payload order.
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> metadata;

  const Tensor* find(const std::string& name) const;
};

File read(const std::filesystem::path& path);

// Writes every tensor as F32 in the given order.
void write(const std::filesystem::path& path, const File& file);

// Header JSON only, without touching the payload.
std::string read_header(const std::filesystem::path& path);

float half_to_float(uint16_t h);
float bfloat_to_float(uint16_t b);

}  // namespace nlens::safetensors
