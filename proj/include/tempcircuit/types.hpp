#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tempcircuit {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using TokenId = std::int32_t;

// Input files that fail to parse. The CLI maps this to exit code 3.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A non-finite value showed up in a loss, gradient or score (exit code 4).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int n_layers = 4;
  int n_heads = 4;
  int d_model = 32;
  int d_head = 8;
  int d_mlp = 64;
  int vocab_size = 0;
  int max_seq_len = 12;
  bool use_rmsnorm = false;
  std::uint64_t seed = 1234;

  // Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

enum class NodeKind : std::uint8_t { Input = 0, Attn = 1, Mlp = 2, Logits = 3 };

// One component of the residual-stream graph. Layer and head are 0-based.
struct NodeId {
  NodeKind kind = NodeKind::Input;
  int layer = 0;
  int head = 0;

  static NodeId input() { return {NodeKind::Input, 0, 0}; }
  static NodeId attn(int layer, int head) { return {NodeKind::Attn, layer, head}; }
  static NodeId mlp(int layer) { return {NodeKind::Mlp, layer, 0}; }
  static NodeId logits() { return {NodeKind::Logits, 0, 0}; }

  bool is_head() const { return kind == NodeKind::Attn; }

  // "input", "a3.h1", "m2", "logits".
  std::string label() const;
  static NodeId parse(std::string_view label);

  bool operator==(const NodeId&) const = default;
};

// Dense topological numbering: input, a0.h0 .. a0.h{H-1}, m0, a1.h0, ..., logits.
int node_count(const ModelConfig& cfg);
int node_index(const ModelConfig& cfg, const NodeId& node);
NodeId node_at(const ModelConfig& cfg, int index);
bool node_exists(const ModelConfig& cfg, const NodeId& node);

enum class EdgeSlot : std::uint8_t { Q = 0, K = 1, V = 2, MlpIn = 3, LogitsIn = 4 };

std::string_view slot_name(EdgeSlot slot);
EdgeSlot parse_slot(std::string_view name);

struct Edge {
  NodeId src;
  NodeId dst;
  EdgeSlot slot = EdgeSlot::LogitsIn;

  bool operator==(const Edge&) const = default;
};

// Legal residual edge: slot matches dst kind and src is strictly upstream.
bool edge_is_legal(const ModelConfig& cfg, const Edge& edge);

// Input slots: three per head (q, k, v), one per MLP, one for the logits.
int slot_count(const ModelConfig& cfg);
int slot_index(const ModelConfig& cfg, const NodeId& dst, EdgeSlot slot);

}  // namespace tempcircuit
