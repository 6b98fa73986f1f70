#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fplab/kernels.hpp"
#include "fplab/reduction.hpp"

namespace fplab {

using TokenId = std::uint32_t;

constexpr TokenId kEndOfSequence = 0;

struct ModelConfig {
  std::uint32_t vocab_size = 256;
  std::uint32_t d_model = 64;
  std::uint32_t n_heads = 4;
  std::uint32_t n_layers = 2;
  std::uint32_t d_ff = 128;
  std::uint32_t max_seq_len = 256;
  std::uint64_t weight_seed = 42;

  // Throws std::invalid_argument on zero counts or d_model % n_heads != 0.
  void validate() const;
  std::uint32_t head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LayerWeights {
  Tensor attn_norm;  // [d]
  Tensor wq, wk, wv, wo;  // [d x d]
  Tensor mlp_norm;  // [d]
  Tensor w_up;  // [d x d_ff]
  Tensor w_down;  // [d_ff x d]
};

// FP32 parameters. Enumeration (and initialisation) order:
//   token_embedding [V x d], position_embedding [S x d],
//   per layer: attn_norm, wq, wk, wv, wo, mlp_norm, w_up, w_down,
//   final_norm [d], unembedding [d x V].
struct WeightSet {
  ModelConfig config;
  Tensor token_embedding;
  Tensor position_embedding;
  std::vector<LayerWeights> layers;
  Tensor final_norm;
  Tensor unembedding;

  std::vector<const Tensor*> tensors() const;
  std::vector<Tensor*> tensors();
  std::uint64_t element_count() const;
};

// Every tensor filled, in enumeration order and row-major within a tensor,
// with float(round((2u - 1) * s)) where u is SplitMix64(weight_seed)'s next
// unit draw and s = 1 / sqrt(d_model).
WeightSet init_weights(const ModelConfig& config);

// Each weight rounded to `via` and widened back to FP32.
WeightSet rounded_weights(const WeightSet& w, Format via);

// FNV-1a 64 over the little-endian FP32 bit patterns in enumeration order.
std::uint64_t weights_checksum(const WeightSet& w);

// Incremental decoder bound to one (weights, policy, schedule) triple.
// step() feeds the next token through every layer and appends to the KV
// cache; recompute() runs the whole sequence layer by layer without a cache.
class Decoder {
 public:
  virtual ~Decoder() = default;
  virtual void reset() = 0;
  // Logits for the token fed, as exact binary64 images of compute-format values.
  virtual std::vector<double> step(TokenId token) = 0;
  virtual std::vector<double> recompute(std::span<const TokenId> tokens) = 0;
  virtual std::size_t position() const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual const PrecisionPolicy& policy() const = 0;
};

std::unique_ptr<Decoder> make_decoder(const WeightSet& weights, const PrecisionPolicy& policy,
                                      const ReductionSchedule& schedule);

// Next-token logits [vocab_size] for the last position, in the compute format.
// Rejects empty or overlong sequences and out-of-vocabulary ids.
Tensor forward(const WeightSet& weights, std::span<const TokenId> tokens, const PrecisionPolicy& policy,
               const ReductionSchedule& schedule);

enum class SamplingMode : std::uint8_t { Greedy, TopP };

struct SamplingParams {
  SamplingMode mode = SamplingMode::TopP;
  double temperature = 0.7;
  double top_p = 0.95;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct TokenProb {
  TokenId token;
  float prob;
  friend bool operator==(const TokenProb&, const TokenProb&) = default;
};

struct GenerationTrace {
  std::vector<TokenId> prompt;
  std::vector<TokenId> tokens;
  std::vector<float> top1_prob;
  std::vector<std::vector<TokenProb>> topk;
  std::string run_config_id;
  // Optional bookkeeping: example index and sampled-run index.
  std::int64_t example = -1;
  std::int64_t run = -1;

  std::size_t length() const { return tokens.size(); }
  friend bool operator==(const GenerationTrace&, const GenerationTrace&) = default;
};

struct DecodeOptions {
  std::size_t top_k = 5;
  // Re-run the whole prefix every step instead of using the KV cache.
  bool recompute = false;
  // When set, the raw logits of each step are appended here.
  std::vector<std::vector<double>>* logits_out = nullptr;
};

// Argmax with ties resolved toward the lowest token id.
TokenId argmax_lowest(std::span<const double> logits);

// Top-k (prob desc, id asc) of a probability vector.
std::vector<TokenProb> top_k(std::span<const float> probs, std::size_t k);

// Smallest descending-probability prefix (ties by id) whose cumulative mass
// reaches top_p; all tokens if rounding keeps the mass below top_p.
std::vector<TokenProb> nucleus(std::span<const float> probs, double top_p);

// Draw from the renormalised nucleus with a SplitMix64 stream seeded with
// rng_seed ^ (0xd1b54a32d192ed03 * (step + 1)).
TokenId draw_from_nucleus(std::span<const TokenProb> kept, std::uint64_t rng_seed, std::size_t step);

GenerationTrace greedy_decode(Decoder& decoder, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                              const DecodeOptions& options = {});
GenerationTrace greedy_decode(const WeightSet& weights, std::span<const TokenId> prompt,
                              std::size_t max_new_tokens, const PrecisionPolicy& policy,
                              const ReductionSchedule& schedule, const DecodeOptions& options = {});

GenerationTrace sample_decode(Decoder& decoder, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                              const SamplingParams& params, const DecodeOptions& options = {});
GenerationTrace sample_decode(const WeightSet& weights, std::span<const TokenId> prompt,
                              std::size_t max_new_tokens, const PrecisionPolicy& policy,
                              const ReductionSchedule& schedule, const SamplingParams& params,
                              const DecodeOptions& options = {});

}  // namespace fplab
