#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evmatch/autograd.hpp"
#include "evmatch/checkpoint.hpp"
#include "evmatch/rng.hpp"

namespace evmatch {

// Named trainable tensors. Ordered map -> deterministic iteration for
// checkpointing and gradient accumulation.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init) {
    require(!params_.count(name), "ParamStore: duplicate param '" + name + "'");
    Var v = Var::param(std::move(init));
    params_.emplace(name, v);
    return v;
  }
  const Var& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "ParamStore: unknown param '" + name + "'");
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) > 0; }
  size_t size() const { return params_.size(); }

  const std::map<std::string, Var>& all() const { return params_; }
  std::map<std::string, Var>& all() { return params_; }

  void export_to(Checkpoint& ck, const std::string& prefix = "") const {
    for (const auto& [name, v] : params_) ck.tensors[prefix + name] = v.value();
  }
  void import_from(const Checkpoint& ck, const std::string& prefix = "") {
    for (auto& [name, v] : params_) {
      auto it = ck.tensors.find(prefix + name);
      require(it != ck.tensors.end(), "checkpoint missing param '" + prefix + name + "'");
      require(it->second.same_shape(v.value()),
              "checkpoint shape mismatch for '" + prefix + name + "'");
      v.mutable_value() = it->second;
    }
  }

 private:
  std::map<std::string, Var> params_;
};

// Multiply-accumulate meter for the attention ops. score_macs covers the
// QK^T and AV products, proj_macs the Q/K/V/O projections.
struct MacCounter {
  uint64_t score_macs = 0;
  uint64_t proj_macs = 0;
  uint64_t total() const { return score_macs + proj_macs; }
};

struct AttnParams {
  // No key-projection bias: a per-key constant shift cancels in softmax,
  // so such a bias has structurally zero gradient.
  Var wq, bq, wk, wv, bv, wo, bo;
};

struct BlockParams {
  AttnParams attn;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
  Var w1, b1, w2, b2;  // MLP
};

namespace init {

inline Tensor xavier(Rng& rng, int64_t fan_in, int64_t fan_out) {
  double std = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  return rng.normal_tensor({fan_in, fan_out}, std);
}

}  // namespace init

inline AttnParams make_attn_params(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng) {
  AttnParams p;
  p.wq = ps.add(prefix + ".wq", init::xavier(rng, dim, dim));
  p.bq = ps.add(prefix + ".bq", Tensor({dim}));
  p.wk = ps.add(prefix + ".wk", init::xavier(rng, dim, dim));
  p.wv = ps.add(prefix + ".wv", init::xavier(rng, dim, dim));
  p.bv = ps.add(prefix + ".bv", Tensor({dim}));
  p.wo = ps.add(prefix + ".wo", init::xavier(rng, dim, dim));
  p.bo = ps.add(prefix + ".bo", Tensor({dim}));
  return p;
}

inline BlockParams make_block_params(ParamStore& ps, const std::string& prefix, int64_t dim,
                                     int64_t mlp_ratio, Rng& rng) {
  BlockParams p;
  p.attn = make_attn_params(ps, prefix + ".attn", dim, rng);
  p.ln1_g = ps.add(prefix + ".ln1_g", Tensor::full({dim}, 1.0));
  p.ln1_b = ps.add(prefix + ".ln1_b", Tensor({dim}));
  p.ln2_g = ps.add(prefix + ".ln2_g", Tensor::full({dim}, 1.0));
  p.ln2_b = ps.add(prefix + ".ln2_b", Tensor({dim}));
  p.w1 = ps.add(prefix + ".w1", init::xavier(rng, dim, dim * mlp_ratio));
  p.b1 = ps.add(prefix + ".b1", Tensor({dim * mlp_ratio}));
  p.w2 = ps.add(prefix + ".w2", init::xavier(rng, dim * mlp_ratio, dim));
  p.b2 = ps.add(prefix + ".b2", Tensor({dim}));
  return p;
}

// Multi-head attention over row groups: q_in is [G*gq x D], kv_in is
// [G*gk x D], and group g's queries attend to group g's keys only. Plain
// attention is the single-group case. key_bias (numel G*gk) is an additive
// logit bias per key; kNegInf entries mask the key exactly. attn_out, when
// given, receives the per-head softmax weights ([G*gq x gk] each).
inline Var multihead_attention_grouped(const AttnParams& p, const Var& q_in, const Var& kv_in,
                                       int64_t heads, int64_t gq, int64_t gk,
                                       const Var& key_bias = {}, MacCounter* mac = nullptr,
                                       std::vector<Tensor>* attn_out = nullptr) {
  int64_t dim = q_in.cols();
  require(kv_in.cols() == dim, "attention: q/kv width mismatch");
  require(dim % heads == 0, "attention: D not divisible by heads");
  int64_t dh = dim / heads;
  int64_t m = q_in.rows(), n = kv_in.rows();
  Var q = linear(q_in, p.wq, p.bq);
  Var k = matmul(kv_in, p.wk);
  Var v = linear(kv_in, p.wv, p.bv);
  if (mac) mac->proj_macs += static_cast<uint64_t>((m + 2 * n) * dim * dim);
  double scale_f = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_outs;
  head_outs.reserve(heads);
  for (int64_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Tensor w;
    head_outs.push_back(grouped_sdpa(qh, kh, vh, gq, gk, scale_f, key_bias,
                                     attn_out ? &w : nullptr));
    if (attn_out) attn_out->push_back(std::move(w));
    if (mac) mac->score_macs += static_cast<uint64_t>(2 * m * gk * dh);
  }
  Var out = linear(concat_cols(head_outs), p.wo, p.bo);
  if (mac) mac->proj_macs += static_cast<uint64_t>(m * dim * dim);
  return out;
}

inline Var multihead_attention(const AttnParams& p, const Var& q_in, const Var& kv_in, int64_t heads,
                               const Var& key_bias = {}, MacCounter* mac = nullptr,
                               std::vector<Tensor>* attn_out = nullptr) {
  return multihead_attention_grouped(p, q_in, kv_in, heads, q_in.rows(), kv_in.rows(), key_bias,
                                     mac, attn_out);
}

// Pre-norm transformer block: x + MHA(LN(x), LN(kv)), then + MLP(LN(.)).
// Self-attention when kv == x. Grouping as in multihead_attention_grouped.
inline Var transformer_block(const BlockParams& p, const Var& x, const Var& kv, int64_t heads,
                             int64_t gq, int64_t gk, const Var& key_bias = {},
                             MacCounter* mac = nullptr, std::vector<Tensor>* attn_out = nullptr) {
  Var qn = layer_norm(x, p.ln1_g, p.ln1_b);
  Var kn = kv.node() == x.node() ? qn : layer_norm(kv, p.ln1_g, p.ln1_b);
  Var y = add(x, multihead_attention_grouped(p.attn, qn, kn, heads, gq, gk, key_bias, mac, attn_out));
  Var z = add(y, linear(gelu(linear(layer_norm(y, p.ln2_g, p.ln2_b), p.w1, p.b1)), p.w2, p.b2));
  return z;
}

inline Var transformer_block_self(const BlockParams& p, const Var& x, int64_t heads,
                                  const Var& key_bias = {}, MacCounter* mac = nullptr,
                                  std::vector<Tensor>* attn_out = nullptr) {
  return transformer_block(p, x, x, heads, x.rows(), x.rows(), key_bias, mac, attn_out);
}

}  // namespace evmatch
