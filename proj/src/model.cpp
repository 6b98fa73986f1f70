#include "fplab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fplab/splitmix.hpp"

namespace fplab {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_heads == 0 || n_layers == 0 || d_ff == 0 || max_seq_len == 0) {
    throw std::invalid_argument("model config: all sizes must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},               {"max_seq_len", c.max_seq_len},
          {"weight_seed", c.weight_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.weight_seed = j.value("weight_seed", c.weight_seed);
  c.validate();
  return c;
}

std::vector<const Tensor*> WeightSet::tensors() const {
  std::vector<const Tensor*> out{&token_embedding, &position_embedding};
  for (const auto& l : layers) {
    for (const Tensor* t : {&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_norm, &l.w_up, &l.w_down}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_norm);
  out.push_back(&unembedding);
  return out;
}

std::vector<Tensor*> WeightSet::tensors() {
  std::vector<Tensor*> out;
  for (const Tensor* t : std::as_const(*this).tensors()) out.push_back(const_cast<Tensor*>(t));
  return out;
}

std::uint64_t WeightSet::element_count() const {
  std::uint64_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

WeightSet init_weights(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, v = config.vocab_size, s = config.max_seq_len, ff = config.d_ff;
  WeightSet w;
  w.config = config;
  w.token_embedding = Tensor({v, d}, Format::FP32);
  w.position_embedding = Tensor({s, d}, Format::FP32);
  w.layers.resize(config.n_layers);
  for (auto& l : w.layers) {
    l.attn_norm = Tensor({d}, Format::FP32);
    l.wq = Tensor({d, d}, Format::FP32);
    l.wk = Tensor({d, d}, Format::FP32);
    l.wv = Tensor({d, d}, Format::FP32);
    l.wo = Tensor({d, d}, Format::FP32);
    l.mlp_norm = Tensor({d}, Format::FP32);
    l.w_up = Tensor({d, ff}, Format::FP32);
    l.w_down = Tensor({ff, d}, Format::FP32);
  }
  w.final_norm = Tensor({d}, Format::FP32);
  w.unembedding = Tensor({d, v}, Format::FP32);

  SplitMix64 rng(config.weight_seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (Tensor* t : w.tensors()) {
    std::vector<double> vals(t->size());
    for (auto& x : vals) x = (2.0 * rng.next_unit() - 1.0) * scale;
    *t = Tensor::from_values(t->shape(), Format::FP32, vals);
  }
  return w;
}

WeightSet rounded_weights(const WeightSet& w, Format via) {
  WeightSet out = w;
  for (Tensor* t : out.tensors()) *t = t->converted(via).converted(Format::FP32);
  return out;
}

std::uint64_t weights_checksum(const WeightSet& w) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor* t : w.tensors()) {
    for (std::size_t i = 0; i < t->size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(t->at(i).bits());
      for (int b = 0; b < 4; ++b) {
        h ^= (bits >> (8 * b)) & 0xffu;
        h *= 0x100000001b3ull;
      }
    }
  }
  return h;
}

namespace {

void check_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t >= c.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(t) + " >= vocab_size " +
                                  std::to_string(c.vocab_size));
    }
  }
}

// Weight storage per policy: the compute type itself for pure policies,
// raw BF16 bits for LayerCast.
template <Format F, bool kLayerCast>
struct Storage {
  using A = Arith<F>;
  using T = typename A::T;
  using W = std::conditional_t<kLayerCast, std::uint16_t, T>;
  using Load = std::conditional_t<kLayerCast, Bf16Load, DirectLoad>;

  static W store(double fp32_value) {
    if constexpr (kLayerCast) {
      return bf16_bits_of(round_float_to_bf16(static_cast<float>(fp32_value)));
    } else {
      return A::from_double(fp32_value);
    }
  }

  static std::vector<W> plain(const Tensor& t) {
    std::vector<W> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) out[i] = store(t.value(i));
    return out;
  }

  // [in x out] row-major -> [out x in] so each output's column is contiguous.
  static std::vector<W> transposed(const Tensor& t) {
    const std::size_t rows = t.shape()[0], cols = t.shape()[1];
    std::vector<W> out(t.size());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = store(t.value(r * cols + c));
    }
    return out;
  }
};

template <Format F, bool kLayerCast>
class Engine final : public Decoder {
  using S = Storage<F, kLayerCast>;
  using A = typename S::A;
  using T = typename S::T;
  using W = typename S::W;
  using Load = typename S::Load;
  // Attention probabilities: FP32 everywhere except the reference policy.
  using U = std::conditional_t<F == Format::FP64REF, double, float>;

  struct Layer {
    std::vector<W> attn_norm, wq, wk, wv, wo, mlp_norm, w_up, w_down;
  };

 public:
  Engine(const WeightSet& w, const PrecisionPolicy& policy, const ReductionSchedule& schedule)
      : config_(w.config), policy_(policy), schedule_(schedule) {
    config_.validate();
    schedule_.validate();
    tok_ = S::plain(w.token_embedding);
    pos_ = S::plain(w.position_embedding);
    for (const auto& l : w.layers) {
      layers_.push_back({S::plain(l.attn_norm), S::transposed(l.wq), S::transposed(l.wk), S::transposed(l.wv),
                         S::transposed(l.wo), S::plain(l.mlp_norm), S::transposed(l.w_up),
                         S::transposed(l.w_down)});
    }
    final_norm_ = S::plain(w.final_norm);
    unembed_ = S::transposed(w.unembedding);
    scale_ = A::from_double(1.0 / std::sqrt(static_cast<double>(config_.head_dim())));
    keys_.resize(config_.n_layers);
    values_.resize(config_.n_layers);
  }

  void reset() override {
    for (auto& k : keys_) k.clear();
    for (auto& v : values_) v.clear();
    pos_index_ = 0;
  }

  std::size_t position() const override { return pos_index_; }
  const ModelConfig& config() const override { return config_; }
  const PrecisionPolicy& policy() const override { return policy_; }

  std::vector<double> step(TokenId token) override {
    const TokenId one[1] = {token};
    check_tokens(config_, one);
    if (pos_index_ >= config_.max_seq_len) {
      throw std::invalid_argument("sequence longer than max_seq_len " + std::to_string(config_.max_seq_len));
    }
    const std::size_t d = config_.d_model;
    std::vector<T> h(d);
    embed(token, pos_index_, h);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<T> a(d), q(d), k(d), v(d);
      attention_inputs(l, h, a, q, k, v);
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());
      std::vector<T> o(d);
      attend(q, keys_[l], values_[l], pos_index_ + 1, o);
      block_tail(l, o, h);
    }
    ++pos_index_;
    return logits(h);
  }

  std::vector<double> recompute(std::span<const TokenId> tokens) override {
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (tokens.size() > config_.max_seq_len) {
      throw std::invalid_argument("forward: " + std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                                  std::to_string(config_.max_seq_len));
    }
    check_tokens(config_, tokens);
    const std::size_t d = config_.d_model, n = tokens.size();
    // Layer-major: the whole sequence passes each layer before the next.
    std::vector<std::vector<T>> h(n, std::vector<T>(d));
    for (std::size_t t = 0; t < n; ++t) embed(tokens[t], t, h[t]);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<std::vector<T>> qs(n, std::vector<T>(d));
      std::vector<T> keys(n * d), values(n * d);
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<T> a(d), k(d), v(d);
        attention_inputs(l, h[t], a, qs[t], k, v);
        std::copy(k.begin(), k.end(), keys.begin() + static_cast<std::ptrdiff_t>(t * d));
        std::copy(v.begin(), v.end(), values.begin() + static_cast<std::ptrdiff_t>(t * d));
      }
      for (std::size_t t = 0; t < n; ++t) {
        std::vector<T> o(d);
        attend(qs[t], keys, values, t + 1, o);
        block_tail(l, o, h[t]);
      }
    }
    return logits(h[n - 1]);
  }

 private:
  T kv_round(T x) const {
    if constexpr (kLayerCast) {
      switch (policy_.kv_cache_storage()) {
        case Format::BF16: return round_float_to_bf16(x);
        case Format::FP16: return round_float_to_fp16(x);
        default: return x;
      }
    } else {
      return x;
    }
  }

  void embed(TokenId token, std::size_t pos, std::vector<T>& h) const {
    const std::size_t d = config_.d_model;
    const Load load{};
    for (std::size_t i = 0; i < d; ++i) {
      h[i] = A::add(static_cast<T>(load(tok_[token * d + i])), static_cast<T>(load(pos_[pos * d + i])));
    }
  }

  void project(const std::vector<W>& wt, std::span<const T> x, std::size_t out_dim, std::span<T> out) {
    matvec<A>(x, wt.data(), 1, x.size(), out_dim, schedule_, Load{}, out, scratch_);
  }

  void attention_inputs(std::size_t l, std::span<const T> h, std::vector<T>& a, std::vector<T>& q,
                        std::vector<T>& k, std::vector<T>& v) {
    const std::size_t d = config_.d_model;
    const Layer& L = layers_[l];
    rmsnorm_into<A>(h, L.attn_norm.data(), Load{}, schedule_, std::span<T>(a), scratch_);
    project(L.wq, a, d, q);
    project(L.wk, a, d, k);
    project(L.wv, a, d, v);
    for (auto& x : k) x = kv_round(x);
    for (auto& x : v) x = kv_round(x);
  }

  // Causal attention of one query over the first `len` cached positions.
  void attend(std::span<const T> q, const std::vector<T>& keys, const std::vector<T>& values, std::size_t len,
              std::span<T> out) {
    const std::size_t d = config_.d_model, hd = config_.head_dim();
    std::vector<U> scores(len), probs(len);
    std::vector<T> terms(std::max(hd, len));
    for (std::size_t head = 0; head < config_.n_heads; ++head) {
      const std::size_t off = head * hd;
      for (std::size_t j = 0; j < len; ++j) {
        const T* kj = keys.data() + j * d + off;
        for (std::size_t i = 0; i < hd; ++i) terms[i] = A::mul(q[off + i], kj[i]);
        const T dot = detail::scheduled_sum<A>(std::span<T>(terms.data(), hd), schedule_, scratch_.permuted,
                                               scratch_.perm);
        scores[j] = static_cast<U>(A::mul(dot, scale_));
      }
      softmax_into<U>(scores, probs);
      for (std::size_t i = 0; i < hd; ++i) {
        for (std::size_t j = 0; j < len; ++j) {
          const T p = A::from_double(static_cast<double>(probs[j]));
          terms[j] = A::mul(p, values[j * d + off + i]);
        }
        out[off + i] = detail::scheduled_sum<A>(std::span<T>(terms.data(), len), schedule_, scratch_.permuted,
                                                attn_perm_);
      }
    }
  }

  // Output projection, residual, MLP block, residual.
  void block_tail(std::size_t l, std::span<const T> o, std::vector<T>& h) {
    const std::size_t d = config_.d_model, ff = config_.d_ff;
    const Layer& L = layers_[l];
    std::vector<T> proj(d), a(d), up(ff), down(d);
    project(L.wo, o, d, proj);
    for (std::size_t i = 0; i < d; ++i) h[i] = A::add(h[i], proj[i]);
    rmsnorm_into<A>(h, L.mlp_norm.data(), Load{}, schedule_, std::span<T>(a), scratch_);
    project(L.w_up, a, ff, up);
    const T one = A::from_double(1.0);
    for (auto& x : up) x = A::div(x, A::add(one, A::exp(-x)));  // SiLU
    project(L.w_down, up, d, down);
    for (std::size_t i = 0; i < d; ++i) h[i] = A::add(h[i], down[i]);
  }

  std::vector<double> logits(std::span<const T> h) {
    const std::size_t d = config_.d_model, v = config_.vocab_size;
    std::vector<T> a(d), out(v);
    rmsnorm_into<A>(h, final_norm_.data(), Load{}, schedule_, std::span<T>(a), scratch_);
    project(unembed_, a, v, out);
    return std::vector<double>(out.begin(), out.end());
  }

  ModelConfig config_;
  PrecisionPolicy policy_;
  ReductionSchedule schedule_;
  std::vector<W> tok_, pos_, final_norm_, unembed_;
  std::vector<Layer> layers_;
  T scale_{};
  std::vector<std::vector<T>> keys_, values_;
  std::size_t pos_index_ = 0;
  KernelScratch<T> scratch_;
  std::vector<std::size_t> attn_perm_;
};

}  // namespace

std::unique_ptr<Decoder> make_decoder(const WeightSet& weights, const PrecisionPolicy& policy,
                                      const ReductionSchedule& schedule) {
  switch (policy.kind()) {
    case PolicyKind::PureBF16: return std::make_unique<Engine<Format::BF16, false>>(weights, policy, schedule);
    case PolicyKind::PureFP16: return std::make_unique<Engine<Format::FP16, false>>(weights, policy, schedule);
    case PolicyKind::PureFP32: return std::make_unique<Engine<Format::FP32, false>>(weights, policy, schedule);
    case PolicyKind::LayerCast: return std::make_unique<Engine<Format::FP32, true>>(weights, policy, schedule);
    case PolicyKind::ReferenceFP64: break;
  }
  return std::make_unique<Engine<Format::FP64REF, false>>(weights, policy, schedule);
}

Tensor forward(const WeightSet& weights, std::span<const TokenId> tokens, const PrecisionPolicy& policy,
               const ReductionSchedule& schedule) {
  auto dec = make_decoder(weights, policy, schedule);
  const auto logits = dec->recompute(tokens);
  return Tensor::from_values({logits.size()}, policy.compute_format(), logits);
}

void SamplingParams::validate() const {
  if (mode != SamplingMode::TopP) return;
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("sampling: temperature must be positive");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("sampling: top_p must be in (0, 1]");
}

TokenId argmax_lowest(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("argmax: empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

namespace {

std::vector<std::size_t> by_prob_desc(std::span<const float> probs) {
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return idx;
}

std::vector<float> probabilities(std::span<const double> logits, float temperature, bool scale) {
  std::vector<float> in(logits.size()), out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    in[i] = static_cast<float>(logits[i]);
    if (scale) in[i] /= temperature;
  }
  softmax_into<float>(in, out);
  return out;
}

void check_decode_args(const Decoder& dec, std::span<const TokenId> prompt, std::size_t max_new_tokens) {
  if (prompt.empty()) throw std::invalid_argument("decode: empty prompt");
  if (max_new_tokens == 0) throw std::invalid_argument("decode: max_new_tokens must be >= 1");
  check_tokens(dec.config(), prompt);
  if (prompt.size() + max_new_tokens - 1 > dec.config().max_seq_len) {
    throw std::invalid_argument("decode: prompt plus generation exceeds max_seq_len");
  }
}

template <class Choose>
GenerationTrace decode_loop(Decoder& dec, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                            const DecodeOptions& options, Choose choose) {
  check_decode_args(dec, prompt, max_new_tokens);
  GenerationTrace trace;
  trace.prompt.assign(prompt.begin(), prompt.end());
  std::vector<TokenId> seq(prompt.begin(), prompt.end());

  dec.reset();
  std::vector<double> logits;
  if (!options.recompute) {
    for (TokenId t : prompt) logits = dec.step(t);
  }
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    if (options.recompute) logits = dec.recompute(seq);
    if (options.logits_out) options.logits_out->push_back(logits);
    const auto [token, probs] = choose(logits, step);
    trace.tokens.push_back(token);
    trace.top1_prob.push_back(*std::max_element(probs.begin(), probs.end()));
    trace.topk.push_back(top_k(probs, options.top_k));
    if (token == kEndOfSequence || step + 1 == max_new_tokens) break;
    seq.push_back(token);
    if (!options.recompute) logits = dec.step(token);
  }
  return trace;
}

}  // namespace

std::vector<TokenProb> top_k(std::span<const float> probs, std::size_t k) {
  const auto idx = by_prob_desc(probs);
  std::vector<TokenProb> out;
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) {
    out.push_back({static_cast<TokenId>(idx[i]), probs[idx[i]]});
  }
  return out;
}

std::vector<TokenProb> nucleus(std::span<const float> probs, double top_p) {
  const auto idx = by_prob_desc(probs);
  std::vector<TokenProb> out;
  double cum = 0.0;
  for (std::size_t i : idx) {
    out.push_back({static_cast<TokenId>(i), probs[i]});
    cum += probs[i];
    if (cum >= top_p) break;
  }
  return out;
}

TokenId draw_from_nucleus(std::span<const TokenProb> kept, std::uint64_t rng_seed, std::size_t step) {
  if (kept.empty()) throw std::invalid_argument("draw: empty nucleus");
  double total = 0.0;
  for (const auto& tp : kept) total += tp.prob;
  SplitMix64 rng(rng_seed ^ (0xd1b54a32d192ed03ull * (static_cast<std::uint64_t>(step) + 1)));
  const double r = rng.next_unit() * total;
  double cum = 0.0;
  for (const auto& tp : kept) {
    cum += tp.prob;
    if (r < cum) return tp.token;
  }
  return kept.back().token;
}

GenerationTrace greedy_decode(Decoder& decoder, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                              const DecodeOptions& options) {
  return decode_loop(decoder, prompt, max_new_tokens, options, [](const std::vector<double>& logits, std::size_t) {
    const TokenId tok = argmax_lowest(logits);
    auto probs = probabilities(logits, 1.0f, false);
    // The greedy token's probability is recorded, which is the maximum.
    return std::pair<TokenId, std::vector<float>>(tok, std::move(probs));
  });
}

GenerationTrace greedy_decode(const WeightSet& weights, std::span<const TokenId> prompt,
                              std::size_t max_new_tokens, const PrecisionPolicy& policy,
                              const ReductionSchedule& schedule, const DecodeOptions& options) {
  auto dec = make_decoder(weights, policy, schedule);
  return greedy_decode(*dec, prompt, max_new_tokens, options);
}

GenerationTrace sample_decode(Decoder& decoder, std::span<const TokenId> prompt, std::size_t max_new_tokens,
                              const SamplingParams& params, const DecodeOptions& options) {
  if (params.mode != SamplingMode::TopP) throw std::invalid_argument("sample_decode: mode must be TopP");
  params.validate();
  const auto temperature = static_cast<float>(params.temperature);
  return decode_loop(decoder, prompt, max_new_tokens, options,
                     [&](const std::vector<double>& logits, std::size_t step) {
                       auto probs = probabilities(logits, temperature, true);
                       const auto kept = nucleus(probs, params.top_p);
                       const TokenId tok = draw_from_nucleus(kept, params.rng_seed, step);
                       return std::pair<TokenId, std::vector<float>>(tok, std::move(probs));
                     });
}

GenerationTrace sample_decode(const WeightSet& weights, std::span<const TokenId> prompt,
                              std::size_t max_new_tokens, const PrecisionPolicy& policy,
                              const ReductionSchedule& schedule, const SamplingParams& params,
                              const DecodeOptions& options) {
  auto dec = make_decoder(weights, policy, schedule);
  return sample_decode(*dec, prompt, max_new_tokens, params, options);
}

}  // namespace fplab
