#pragma once

#include "tempcircuit/types.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace tempcircuit {

struct HeadWeights {
  Mat wq;  // d_model x d_head
  Mat wk;
  Mat wv;
  Mat wo;  // d_head x d_model
};

struct LayerWeights {
  std::vector<HeadWeights> heads;
  Mat w_in;  // d_model x d_mlp
  RowVec b_in;
  Mat w_out;  // d_mlp x d_model
  RowVec b_out;
};

struct Weights {
  ModelConfig config;
  Mat tok_emb;  // vocab x d_model
  Mat pos_emb;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  Mat unembed;  // d_model x vocab
};

// Same shapes as `cfg`, every entry zero. Used as a gradient accumulator.
Weights zero_weights(const ModelConfig& cfg);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from cfg.seed, rounded to float.
// Embedding tables use fan_in = d_model; biases start at zero.
Weights init_weights(const ModelConfig& cfg);

// Parameter blocks in checkpoint order: tok_emb, pos_emb, then per layer
// (per head wq, wk, wv, wo), w_in, b_in, w_out, b_out; finally unembed.
void visit_params(Weights& w, const std::function<void(const std::string&, std::span<double>)>& fn);
void visit_params(const Weights& w, const std::function<void(const std::string&, std::span<const double>)>& fn);
std::size_t param_count(const ModelConfig& cfg);

// Rounds every parameter to the nearest float so checkpoints round-trip exactly.
void round_to_float(Weights& w);
bool all_finite(const Weights& w);

// ---------------------------------------------------------------------------
// Hooks

// Replace a head's (or MLP's) output with zeros at every position.
struct ZeroHeadOutput {
  NodeId node;
};

// Overwrite rows [pos_begin, pos_end) of a node's output.
struct PatchNodeOutput {
  NodeId node;
  int pos_begin = 0;
  int pos_end = 0;
  Mat values;
};

// The destination slot of `edge` reads `replacement` (seq x d_model) in place
// of the source's output. Every other reader of the source is unaffected.
struct PatchEdgeInput {
  Edge edge;
  Mat replacement;
};

// Where an attention-value injection is applied.
enum class ValueTap : std::uint8_t {
  // Added to the head's value vector at `position`; queries that attend to
  // that position pick it up through the attention weights.
  Value,
  // Added to the mixed head output z = A v at `position`, before W_o.
  Mixed,
};

struct AddToHeadValue {
  int layer = 0;
  int head = 0;
  int position = 0;
  Vec vector;  // d_head
  double coefficient = 1.0;
  ValueTap tap = ValueTap::Value;
};

// Overwrite the residual stream entering `layer` (layer == n_layers means the
// stream entering the unembedding) at rows [pos_begin, pos_end).
struct RestoreResidual {
  int layer = 0;
  int pos_begin = 0;
  int pos_end = 0;
  Mat values;
};

using Hook = std::variant<ZeroHeadOutput, PatchNodeOutput, PatchEdgeInput, AddToHeadValue, RestoreResidual>;

struct HookSpec {
  std::vector<Hook> directives;

  bool empty() const { return directives.empty(); }
  HookSpec& add(Hook hook) {
    directives.push_back(std::move(hook));
    return *this;
  }
};

// ---------------------------------------------------------------------------
// Forward pass

struct HeadCache {
  Mat in_q, in_k, in_v;  // slot inputs (pre-norm), seq x d_model
  Mat q, k, v;           // seq x d_head; v includes any value injection
  Mat attn;              // seq x seq, row = query
  Mat z;                 // attn * v (+ mixed injection), seq x d_head
};

struct MlpCache {
  Mat in;   // seq x d_model
  Mat pre;  // seq x d_mlp
  Mat act;
};

struct ActivationCache {
  std::vector<TokenId> tokens;
  std::vector<Mat> node_out;   // indexed by node_index; logits entry is empty
  std::vector<Mat> resid_pre;  // stream entering layer l, l = 0..n_layers
  std::vector<std::vector<HeadCache>> heads;
  std::vector<MlpCache> mlps;
  Mat logits_in;
  Mat logits;  // seq x vocab

  const Mat& out(const ModelConfig& cfg, const NodeId& node) const { return node_out[node_index(cfg, node)]; }
  // The head's value vectors (AttnV), seq x d_head.
  const Mat& attn_value(int layer, int head) const { return heads[layer][head].v; }
  int seq_len() const { return static_cast<int>(tokens.size()); }
};

struct ForwardResult {
  Mat logits;
  ActivationCache cache;
};

ForwardResult forward(const Weights& w, std::span<const TokenId> tokens, const HookSpec& hooks = {});

// Rejects malformed hooks (unknown nodes, out-of-range positions, bad shapes).
void validate_hooks(const ModelConfig& cfg, int seq_len, const HookSpec& hooks);

// ---------------------------------------------------------------------------
// Losses and gradients

// Metric evaluated at the final position.
struct LossSpec {
  enum class Kind : std::uint8_t { LogitDiff, Nll };
  Kind kind = Kind::LogitDiff;
  TokenId target = 0;
  TokenId foil = 0;  // LogitDiff only

  static LossSpec logit_diff(TokenId target, TokenId foil) { return {Kind::LogitDiff, target, foil}; }
  static LossSpec nll(TokenId target) { return {Kind::Nll, target, 0}; }
};

// logit(target) - logit(foil) on the final row.
double loss_logit_diff(const Mat& logits, TokenId target, TokenId foil);
// -log softmax(final row)[target].
double loss_nll(const Mat& logits, TokenId target);
double evaluate_loss(const Mat& logits, const LossSpec& loss);

// Log-softmax of one row, computed stably.
RowVec log_softmax(const Eigen::Ref<const RowVec>& logits);

struct Gradients {
  double loss = 0.0;
  std::vector<Mat> node_out;  // dL/d(node output), by node_index; logits entry empty
  std::vector<Mat> slot_in;   // dL/d(slot input), by slot_index
  std::optional<Weights> params;

  const Mat& slot(const ModelConfig& cfg, const NodeId& dst, EdgeSlot s) const { return slot_in[slot_index(cfg, dst, s)]; }
};

struct BackwardOptions {
  bool param_grads = true;
};

// Reverse-mode gradients of `loss` through the (hooked) forward in `cache`.
Gradients backward(const Weights& w, const ActivationCache& cache, const HookSpec& hooks, const LossSpec& loss,
                   const BackwardOptions& opts = {});

// Convenience: forward + backward without hooks.
Gradients backward(const Weights& w, std::span<const TokenId> tokens, const LossSpec& loss,
                   const BackwardOptions& opts = {});

// Central-difference check of parameter gradients on `n_samples` coordinates
// drawn with `seed`. Relative error is |a-b| / max(|a|, |b|, 1e-7).
struct GradCheckResult {
  double max_rel_error = 0.0;
  int n_checked = 0;
};
GradCheckResult grad_check(const Weights& w, std::span<const TokenId> tokens, const LossSpec& loss, int n_samples,
                           double h, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Decoding

// Argmax with ties broken toward the lowest id.
TokenId argmax_token(const Eigen::Ref<const RowVec>& row);

std::vector<TokenId> generate_greedy(const Weights& w, std::span<const TokenId> prompt, int max_new_tokens,
                                     const HookSpec& hooks = {});

}  // namespace tempcircuit
