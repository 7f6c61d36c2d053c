#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefopt/data.hpp"
#include "prefopt/objectives.hpp"

namespace prefopt {

struct TinyLMConfig {
  int vocab_size = 260;  // 256 byte values + 4 specials
  int d_model = 32;
  int n_layers = 1;
  int n_heads = 1;
  int d_ff = 128;
  int max_context = 256;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  bool operator==(const TinyLMConfig&) const = default;
};

// Row-major 2-D tensor of doubles; vectors are 1 x n.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }
  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return data.size(); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

struct BlockParams {
  Tensor attn_wq, attn_wk, attn_wv, attn_wo;  // d_model x d_model
  Tensor ln1_gain, ln1_offset;                // 1 x d_model
  Tensor mlp_w1, mlp_b1;                      // d_model x d_ff, 1 x d_ff
  Tensor mlp_w2, mlp_b2;                      // d_ff x d_model, 1 x d_model
  Tensor ln2_gain, ln2_offset;                // 1 x d_model
};

struct TinyLMParams {
  TinyLMConfig config;
  Tensor tok_emb;  // vocab_size x d_model
  Tensor pos_emb;  // max_context x d_model
  std::vector<BlockParams> blocks;
  Tensor lnf_gain, lnf_offset;  // 1 x d_model
  Tensor out_proj;              // d_model x vocab_size
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};
struct NamedTensorConst {
  std::string name;
  const Tensor* tensor;
};

// Fixed-order tensor listing; Adam state, checkpoints, and gradient
// accumulation all iterate in this order.
std::vector<NamedTensor> named_tensors(TinyLMParams& p);
std::vector<NamedTensorConst> named_tensors(const TinyLMParams& p);

// Deterministic initialization: normal(0, 0.02) weights, unit layer-norm
// gains, zero offsets and biases. Same config and seed give identical bits.
TinyLMParams init_params(const TinyLMConfig& cfg);

// Same shapes, all zeros; used for gradients and optimizer moments.
TinyLMParams zeros_like(const TinyLMParams& p);

struct SequenceScore {
  double logp = 0.0;
  std::vector<double> per_token;  // log-prob of each response token, <= 0
};

// Masked sequence log-likelihood: the context conditions, only response
// tokens contribute. Throws LengthError when context + response exceeds
// max_context (or the context is empty).
SequenceScore sequence_log_likelihood(const TinyLMParams& params, std::span<const int> context,
                                      std::span<const int> response);

// Full next-token distribution at every response position; diagnostic.
std::vector<std::vector<double>> response_token_distributions(const TinyLMParams& params,
                                                              std::span<const int> context,
                                                              std::span<const int> response);

// Scores one pair under the policy (and the reference when the objective
// needs one).
PairScores pair_scores(const TinyLMParams& params, const TinyLMParams* ref_params,
                       const TokenizedPair& pair, const ObjectiveConfig& cfg);

struct BatchBackward {
  double mean_loss = 0.0;
  TinyLMParams grads;
  std::vector<LossResult> per_pair;
  std::vector<double> delta_r;
};

// Exact reverse-mode gradients of the batch mean loss with respect to every
// policy tensor; reference parameters receive no gradient.
BatchBackward backward(const TinyLMParams& params, const TinyLMParams* ref_params,
                       std::span<const TokenizedPair> batch, const ObjectiveConfig& cfg);

}  // namespace prefopt
