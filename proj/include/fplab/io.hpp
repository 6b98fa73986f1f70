#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fplab/kernels.hpp"
#include "fplab/model.hpp"
#include "json.hpp"

namespace fplab {

// File-system and format failures; the message names the file involved.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary tensor container, all integers little-endian:
//   u8  format tag (0 bf16, 1 fp16, 2 fp32, 3 fp64)
//   u64 rank
//   u64 dims[rank]
//   element bit patterns, width_of(format) / 8 bytes each, row-major
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
// Throws IoError on truncation, trailing bytes or an unknown tag.
Tensor decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// "3f800000" style lowercase hex of an FP32 bit pattern, and back.
std::string fp32_hex(float v);
float fp32_from_hex(const std::string& hex);

// One JSONL record:
//   {"run_config_id", "example", "run", "prompt", "tokens", "length",
//    "top1_prob": [[hex, decimal], ...],
//    "topk": [[[token, hex, decimal], ...], ...]}
// Probabilities are read back from the hex field only.
nlohmann::json to_json(const GenerationTrace& t);
GenerationTrace trace_from_json(const nlohmann::json& j);

std::string to_jsonl(const std::vector<GenerationTrace>& traces);
std::vector<GenerationTrace> read_jsonl(const std::filesystem::path& path);

// Write through a temporary sibling and rename, so readers never see a
// partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

// FNV-1a 64 of a byte string, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace fplab
