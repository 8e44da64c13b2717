#include "tempcircuit/types.hpp"

#include <charconv>

namespace tempcircuit {

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1 || d_mlp < 1 ||
      vocab_size < 1 || max_seq_len < 1) {
    throw std::invalid_argument("model config: all counts must be >= 1");
  }
  if (n_heads * d_head != d_model) {
    throw std::invalid_argument("model config: n_heads * d_head must equal d_model");
  }
}

std::string NodeId::label() const {
  switch (kind) {
    case NodeKind::Input:
      return "input";
    case NodeKind::Attn:
      return "a" + std::to_string(layer) + ".h" + std::to_string(head);
    case NodeKind::Mlp:
      return "m" + std::to_string(layer);
    case NodeKind::Logits:
      return "logits";
  }
  return "?";
}

namespace {

int parse_int(std::string_view s, std::string_view whole) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty() || value < 0) {
    throw std::invalid_argument("bad node label: " + std::string(whole));
  }
  return value;
}

}  // namespace

NodeId NodeId::parse(std::string_view label) {
  if (label == "input") return input();
  if (label == "logits") return logits();
  if (label.size() >= 2 && label[0] == 'm') return mlp(parse_int(label.substr(1), label));
  if (label.size() >= 4 && label[0] == 'a') {
    const auto dot = label.find(".h");
    if (dot != std::string_view::npos) {
      return attn(parse_int(label.substr(1, dot - 1), label), parse_int(label.substr(dot + 2), label));
    }
  }
  throw std::invalid_argument("bad node label: " + std::string(label));
}

int node_count(const ModelConfig& cfg) { return 2 + cfg.n_layers * (cfg.n_heads + 1); }

bool node_exists(const ModelConfig& cfg, const NodeId& node) {
  switch (node.kind) {
    case NodeKind::Input:
    case NodeKind::Logits:
      return true;
    case NodeKind::Attn:
      return node.layer >= 0 && node.layer < cfg.n_layers && node.head >= 0 && node.head < cfg.n_heads;
    case NodeKind::Mlp:
      return node.layer >= 0 && node.layer < cfg.n_layers;
  }
  return false;
}

int node_index(const ModelConfig& cfg, const NodeId& node) {
  if (!node_exists(cfg, node)) throw std::out_of_range("node not in model: " + node.label());
  const int per_layer = cfg.n_heads + 1;
  switch (node.kind) {
    case NodeKind::Input:
      return 0;
    case NodeKind::Attn:
      return 1 + node.layer * per_layer + node.head;
    case NodeKind::Mlp:
      return 1 + node.layer * per_layer + cfg.n_heads;
    case NodeKind::Logits:
      return node_count(cfg) - 1;
  }
  return -1;
}

NodeId node_at(const ModelConfig& cfg, int index) {
  if (index < 0 || index >= node_count(cfg)) throw std::out_of_range("node index out of range");
  if (index == 0) return NodeId::input();
  if (index == node_count(cfg) - 1) return NodeId::logits();
  const int per_layer = cfg.n_heads + 1;
  const int layer = (index - 1) / per_layer;
  const int within = (index - 1) % per_layer;
  return within == cfg.n_heads ? NodeId::mlp(layer) : NodeId::attn(layer, within);
}

std::string_view slot_name(EdgeSlot slot) {
  switch (slot) {
    case EdgeSlot::Q:
      return "q";
    case EdgeSlot::K:
      return "k";
    case EdgeSlot::V:
      return "v";
    case EdgeSlot::MlpIn:
      return "mlp_in";
    case EdgeSlot::LogitsIn:
      return "logits_in";
  }
  return "?";
}

EdgeSlot parse_slot(std::string_view name) {
  if (name == "q") return EdgeSlot::Q;
  if (name == "k") return EdgeSlot::K;
  if (name == "v") return EdgeSlot::V;
  if (name == "mlp_in") return EdgeSlot::MlpIn;
  if (name == "logits_in") return EdgeSlot::LogitsIn;
  throw std::invalid_argument("bad edge slot: " + std::string(name));
}

bool edge_is_legal(const ModelConfig& cfg, const Edge& edge) {
  if (!node_exists(cfg, edge.src) || !node_exists(cfg, edge.dst)) return false;
  switch (edge.dst.kind) {
    case NodeKind::Attn:
      if (edge.slot != EdgeSlot::Q && edge.slot != EdgeSlot::K && edge.slot != EdgeSlot::V) return false;
      break;
    case NodeKind::Mlp:
      if (edge.slot != EdgeSlot::MlpIn) return false;
      break;
    case NodeKind::Logits:
      if (edge.slot != EdgeSlot::LogitsIn) return false;
      break;
    case NodeKind::Input:
      return false;
  }
  switch (edge.src.kind) {
    case NodeKind::Input:
      return true;
    case NodeKind::Logits:
      return false;
    case NodeKind::Attn:
      if (edge.dst.kind == NodeKind::Logits) return true;
      if (edge.dst.kind == NodeKind::Mlp) return edge.src.layer <= edge.dst.layer;
      return edge.src.layer < edge.dst.layer;
    case NodeKind::Mlp:
      if (edge.dst.kind == NodeKind::Logits) return true;
      return edge.src.layer < edge.dst.layer;
  }
  return false;
}

int slot_count(const ModelConfig& cfg) { return cfg.n_layers * cfg.n_heads * 3 + cfg.n_layers + 1; }

int slot_index(const ModelConfig& cfg, const NodeId& dst, EdgeSlot slot) {
  if (!node_exists(cfg, dst)) throw std::out_of_range("node not in model: " + dst.label());
  const int per_layer = cfg.n_heads * 3 + 1;
  switch (dst.kind) {
    case NodeKind::Attn:
      if (slot > EdgeSlot::V) break;
      return dst.layer * per_layer + dst.head * 3 + static_cast<int>(slot);
    case NodeKind::Mlp:
      if (slot != EdgeSlot::MlpIn) break;
      return dst.layer * per_layer + cfg.n_heads * 3;
    case NodeKind::Logits:
      if (slot != EdgeSlot::LogitsIn) break;
      return cfg.n_layers * per_layer;
    case NodeKind::Input:
      break;
  }
  throw std::invalid_argument("slot " + std::string(slot_name(slot)) + " does not belong to " + dst.label());
}

}  // namespace tempcircuit
