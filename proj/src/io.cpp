#include "fplab/io.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fplab {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes = 8) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t& pos, int bytes = 8) {
  if (pos + static_cast<std::size_t>(bytes) > in.size()) throw IoError("tensor container truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(bytes);
  return v;
}

std::string float_decimal(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(t.storage_format()));
  put_u64(out, t.rank());
  for (auto d : t.shape()) put_u64(out, d);
  const int bytes = width_of(t.storage_format()) / 8;
  for (std::size_t i = 0; i < t.size(); ++i) put_u64(out, t.at(i).bits(), bytes);
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty()) throw IoError("tensor container empty");
  const std::uint8_t tag = bytes[0];
  if (tag > static_cast<std::uint8_t>(Format::FP64REF)) {
    throw IoError("tensor container: unknown format tag " + std::to_string(tag));
  }
  const auto format = static_cast<Format>(tag);
  std::size_t pos = 1;
  const std::uint64_t rank = get_u64(bytes, pos);
  if (rank > 16) throw IoError("tensor container: implausible rank " + std::to_string(rank));
  std::vector<std::size_t> shape;
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    shape.push_back(static_cast<std::size_t>(get_u64(bytes, pos)));
    count *= shape.back();
  }
  const int width = width_of(format) / 8;
  if (bytes.size() - pos != count * static_cast<std::uint64_t>(width)) {
    throw IoError("tensor container: payload size does not match shape");
  }
  std::vector<ScalarBits> elems;
  elems.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) elems.push_back(ScalarBits::from_bits(format, get_u64(bytes, pos, width)));
  return Tensor::from_bits(std::move(shape), format, elems);
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  write_file_atomic(path, std::string(bytes.begin(), bytes.end()));
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto s = read_file(path);
  try {
    return decode_tensor(std::vector<std::uint8_t>(s.begin(), s.end()));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string fp32_hex(float v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", std::bit_cast<std::uint32_t>(v));
  return buf;
}

float fp32_from_hex(const std::string& hex) {
  std::uint32_t bits = 0;
  auto res = std::from_chars(hex.data(), hex.data() + hex.size(), bits, 16);
  if (hex.size() != 8 || res.ec != std::errc() || res.ptr != hex.data() + hex.size()) {
    throw IoError("bad FP32 hex pattern '" + hex + "'");
  }
  return std::bit_cast<float>(bits);
}

nlohmann::json to_json(const GenerationTrace& t) {
  nlohmann::json j;
  j["run_config_id"] = t.run_config_id;
  j["example"] = t.example;
  j["run"] = t.run;
  j["prompt"] = t.prompt;
  j["tokens"] = t.tokens;
  j["length"] = t.length();
  auto probs = nlohmann::json::array();
  for (float p : t.top1_prob) probs.push_back({fp32_hex(p), float_decimal(p)});
  j["top1_prob"] = std::move(probs);
  auto topk = nlohmann::json::array();
  for (const auto& step : t.topk) {
    auto row = nlohmann::json::array();
    for (const auto& tp : step) row.push_back({tp.token, fp32_hex(tp.prob), float_decimal(tp.prob)});
    topk.push_back(std::move(row));
  }
  j["topk"] = std::move(topk);
  return j;
}

GenerationTrace trace_from_json(const nlohmann::json& j) {
  GenerationTrace t;
  try {
    t.run_config_id = j.at("run_config_id").get<std::string>();
    t.example = j.value("example", std::int64_t{-1});
    t.run = j.value("run", std::int64_t{-1});
    t.prompt = j.at("prompt").get<std::vector<TokenId>>();
    t.tokens = j.at("tokens").get<std::vector<TokenId>>();
    for (const auto& p : j.at("top1_prob")) t.top1_prob.push_back(fp32_from_hex(p.at(0).get<std::string>()));
    for (const auto& row : j.at("topk")) {
      std::vector<TokenProb> step;
      for (const auto& e : row) step.push_back({e.at(0).get<TokenId>(), fp32_from_hex(e.at(1).get<std::string>())});
      t.topk.push_back(std::move(step));
    }
    if (j.at("length").get<std::size_t>() != t.tokens.size()) throw IoError("length field disagrees with tokens");
    if (t.top1_prob.size() != t.tokens.size() || t.topk.size() != t.tokens.size()) {
      throw IoError("per-step arrays disagree with tokens");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed trace record: ") + e.what());
  }
  return t;
}

std::string to_jsonl(const std::vector<GenerationTrace>& traces) {
  std::string out;
  for (const auto& t : traces) {
    out += to_json(t).dump();
    out += '\n';
  }
  return out;
}

std::vector<GenerationTrace> read_jsonl(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<GenerationTrace> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trace_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw IoError(path.parent_path().string() + ": " + ec.message());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fplab
