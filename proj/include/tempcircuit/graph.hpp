#pragma once

#include "tempcircuit/dataset.hpp"
#include "tempcircuit/model.hpp"

#include <nlohmann/json.hpp>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace tempcircuit {

struct CircuitProvenance {
  std::string fact;  // subject of the fact the circuit was extracted for
  int year = 0;
  std::string template_id;
  double tau = 0.0;
  std::size_t top_n = 0;
  std::string metric;
  int ig_steps = 0;
  int n_pairs = 0;

  bool operator==(const CircuitProvenance&) const = default;
};

struct ScoredEdge {
  Edge edge;
  std::optional<double> score;

  bool operator==(const ScoredEdge&) const = default;
};

// Orders edges by destination (topological), slot, then source.
bool edge_less(const ModelConfig& cfg, const Edge& a, const Edge& b);

struct CircuitGraph {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<NodeId> nodes;  // topological order
  std::vector<ScoredEdge> edges;  // edge_less order
  std::optional<CircuitProvenance> provenance;

  bool has_node(const NodeId& node) const;
  bool has_edge(const Edge& edge) const;
  // Attention-head nodes, in topological order.
  std::vector<NodeId> heads() const;
  // Checks the structural invariants; throws std::invalid_argument.
  void validate() const;

  bool operator==(const CircuitGraph&) const = default;
};

// Every node and every legal residual edge with split q/k/v fan-in.
CircuitGraph full_graph(const ModelConfig& cfg);
// Number of edges in full_graph(cfg), in closed form.
std::size_t full_edge_count(const ModelConfig& cfg);

inline constexpr std::size_t kNoLimit = std::numeric_limits<std::size_t>::max();

// Keeps edges scoring above tau, then the top_n highest (ties keep edge
// order). Nodes without a retained edge are dropped, except input and logits.
// `scores` is aligned with full.edges.
CircuitGraph prune(const CircuitGraph& full, std::span<const double> scores, double tau, std::size_t top_n);

// The clean prompt with every edge outside the circuit fed the source node's
// output from the corrupted prompt.
Mat run_with_circuit(const Weights& w, const CircuitGraph& circuit, const PromptPair& pair);
// Same, with the two cached forward passes supplied by the caller.
Mat run_with_circuit(const Weights& w, const CircuitGraph& circuit, const ActivationCache& clean,
                     const ActivationCache& corrupted);

std::string export_dot(const CircuitGraph& circuit);
nlohmann::json export_json(const CircuitGraph& circuit);
CircuitGraph graph_from_json(const nlohmann::json& j);

}  // namespace tempcircuit
