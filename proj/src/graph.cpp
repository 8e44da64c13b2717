#include "tempcircuit/graph.hpp"

#include "tempcircuit/format.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace tempcircuit {

namespace {

ModelConfig dims(int n_layers, int n_heads) {
  ModelConfig cfg;
  cfg.n_layers = n_layers;
  cfg.n_heads = n_heads;
  return cfg;
}

std::vector<EdgeSlot> slots_of(const NodeId& dst) {
  switch (dst.kind) {
    case NodeKind::Attn:
      return {EdgeSlot::Q, EdgeSlot::K, EdgeSlot::V};
    case NodeKind::Mlp:
      return {EdgeSlot::MlpIn};
    case NodeKind::Logits:
      return {EdgeSlot::LogitsIn};
    case NodeKind::Input:
      break;
  }
  return {};
}

}  // namespace

bool edge_less(const ModelConfig& cfg, const Edge& a, const Edge& b) {
  const auto key = [&](const Edge& e) {
    return std::tuple(node_index(cfg, e.dst), static_cast<int>(e.slot), node_index(cfg, e.src));
  };
  return key(a) < key(b);
}

bool CircuitGraph::has_node(const NodeId& node) const { return std::find(nodes.begin(), nodes.end(), node) != nodes.end(); }

bool CircuitGraph::has_edge(const Edge& edge) const {
  return std::any_of(edges.begin(), edges.end(), [&](const ScoredEdge& e) { return e.edge == edge; });
}

std::vector<NodeId> CircuitGraph::heads() const {
  std::vector<NodeId> out;
  for (const auto& n : nodes) {
    if (n.is_head()) out.push_back(n);
  }
  return out;
}

void CircuitGraph::validate() const {
  const ModelConfig cfg = dims(n_layers, n_heads);
  if (!has_node(NodeId::input()) || !has_node(NodeId::logits())) {
    throw std::invalid_argument("circuit: input and logits nodes are required");
  }
  for (const auto& n : nodes) {
    if (!node_exists(cfg, n)) throw std::invalid_argument("circuit: node " + n.label() + " outside the model");
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i].edge;
    if (!edge_is_legal(cfg, e)) throw std::invalid_argument("circuit: illegal edge " + e.src.label() + "->" + e.dst.label());
    if (!has_node(e.src) || !has_node(e.dst)) throw std::invalid_argument("circuit: edge endpoint missing from node set");
    if (i > 0 && !edge_less(cfg, edges[i - 1].edge, e)) throw std::invalid_argument("circuit: edges out of order");
  }
}

CircuitGraph full_graph(const ModelConfig& cfg) {
  CircuitGraph g;
  g.n_layers = cfg.n_layers;
  g.n_heads = cfg.n_heads;
  const int n = node_count(cfg);
  for (int i = 0; i < n; ++i) g.nodes.push_back(node_at(cfg, i));
  for (int d = 1; d < n; ++d) {
    const NodeId dst = node_at(cfg, d);
    for (EdgeSlot slot : slots_of(dst)) {
      for (int s = 0; s < d; ++s) {
        const Edge e{node_at(cfg, s), dst, slot};
        if (edge_is_legal(cfg, e)) g.edges.push_back({e, std::nullopt});
      }
    }
  }
  return g;
}

std::size_t full_edge_count(const ModelConfig& cfg) {
  const std::size_t L = cfg.n_layers, H = cfg.n_heads;
  std::size_t total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t upstream_of_heads = 1 + l * (H + 1);
    total += 3 * H * upstream_of_heads;  // q, k, v of every head in layer l
    total += upstream_of_heads + H;      // the layer's MLP also sees its own heads
  }
  return total + 1 + L * (H + 1);  // logits
}

CircuitGraph prune(const CircuitGraph& full, std::span<const double> scores, double tau, std::size_t top_n) {
  if (scores.size() != full.edges.size()) throw std::invalid_argument("prune: scores do not cover the graph");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw NumericError("prune: non-finite score on edge " + std::to_string(i));
    if (scores[i] > tau) keep.push_back(i);
  }
  std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  if (keep.size() > top_n) keep.resize(top_n);
  std::sort(keep.begin(), keep.end());

  CircuitGraph out;
  out.n_layers = full.n_layers;
  out.n_heads = full.n_heads;
  const ModelConfig cfg = dims(full.n_layers, full.n_heads);
  std::vector<char> used(node_count(cfg), 0);
  used[node_index(cfg, NodeId::input())] = 1;
  used[node_index(cfg, NodeId::logits())] = 1;
  for (std::size_t i : keep) {
    out.edges.push_back({full.edges[i].edge, scores[i]});
    used[node_index(cfg, full.edges[i].edge.src)] = 1;
    used[node_index(cfg, full.edges[i].edge.dst)] = 1;
  }
  for (int i = 0; i < node_count(cfg); ++i) {
    if (used[i]) out.nodes.push_back(node_at(cfg, i));
  }
  return out;
}

Mat run_with_circuit(const Weights& w, const CircuitGraph& circuit, const ActivationCache& clean,
                     const ActivationCache& corrupted) {
  const ModelConfig& cfg = w.config;
  if (circuit.n_layers != cfg.n_layers || circuit.n_heads != cfg.n_heads) {
    throw std::invalid_argument("run_with_circuit: circuit drawn from a different model shape");
  }
  if (clean.seq_len() != corrupted.seq_len()) throw std::invalid_argument("run_with_circuit: pair lengths differ");
  std::vector<char> in_circuit(static_cast<std::size_t>(slot_count(cfg)) * node_count(cfg), 0);
  auto key = [&](const Edge& e) {
    return static_cast<std::size_t>(slot_index(cfg, e.dst, e.slot)) * node_count(cfg) + node_index(cfg, e.src);
  };
  for (const auto& e : circuit.edges) in_circuit[key(e.edge)] = 1;

  HookSpec hooks;
  for (const auto& e : full_graph(cfg).edges) {
    if (!in_circuit[key(e.edge)]) hooks.add(PatchEdgeInput{e.edge, corrupted.out(cfg, e.edge.src)});
  }
  return forward(w, clean.tokens, hooks).logits;
}

Mat run_with_circuit(const Weights& w, const CircuitGraph& circuit, const PromptPair& pair) {
  if (pair.clean.tokens.size() != pair.corrupted.tokens.size()) {
    throw std::invalid_argument("run_with_circuit: pair lengths differ");
  }
  const auto clean = forward(w, pair.clean.tokens);
  const auto corrupted = forward(w, pair.corrupted.tokens);
  return run_with_circuit(w, circuit, clean.cache, corrupted.cache);
}

std::string export_dot(const CircuitGraph& circuit) {
  std::ostringstream out;
  out << "digraph circuit {\n  rankdir=BT;\n  node [shape=box, fontname=\"Helvetica\"];\n";
  for (const auto& n : circuit.nodes) {
    const char* color = n.kind == NodeKind::Attn ? "#c6dbef" : n.kind == NodeKind::Mlp ? "#fdd0a2" : "#d9d9d9";
    out << "  \"" << n.label() << "\" [style=filled, fillcolor=\"" << color << "\"];\n";
  }
  for (const auto& e : circuit.edges) {
    out << "  \"" << e.edge.src.label() << "\" -> \"" << e.edge.dst.label() << "\" [label=\"" << slot_name(e.edge.slot);
    if (e.score) out << " " << fmt_num(*e.score);
    out << "\"";
    if (e.score) out << ", score=" << fmt_num(*e.score);
    out << "];\n";
  }
  out << "}\n";
  return out.str();
}

nlohmann::json export_json(const CircuitGraph& circuit) {
  nlohmann::json j;
  j["n_layers"] = circuit.n_layers;
  j["n_heads"] = circuit.n_heads;
  j["nodes"] = nlohmann::json::array();
  for (const auto& n : circuit.nodes) j["nodes"].push_back(n.label());
  j["edges"] = nlohmann::json::array();
  for (const auto& e : circuit.edges) {
    nlohmann::json je{{"src", e.edge.src.label()}, {"dst", e.edge.dst.label()}, {"slot", std::string(slot_name(e.edge.slot))}};
    je["score"] = e.score ? nlohmann::json(*e.score) : nlohmann::json(nullptr);
    j["edges"].push_back(std::move(je));
  }
  if (circuit.provenance) {
    const auto& p = *circuit.provenance;
    j["provenance"] = {{"fact", p.fact},   {"year", p.year},         {"template", p.template_id},
                       {"tau", p.tau},     {"top_n", p.top_n},       {"metric", p.metric},
                       {"ig_steps", p.ig_steps}, {"n_pairs", p.n_pairs}};
  } else {
    j["provenance"] = nullptr;
  }
  return j;
}

CircuitGraph graph_from_json(const nlohmann::json& j) {
  try {
    CircuitGraph g;
    g.n_layers = j.at("n_layers").get<int>();
    g.n_heads = j.at("n_heads").get<int>();
    for (const auto& n : j.at("nodes")) g.nodes.push_back(NodeId::parse(n.get<std::string>()));
    for (const auto& je : j.at("edges")) {
      ScoredEdge e{{NodeId::parse(je.at("src").get<std::string>()), NodeId::parse(je.at("dst").get<std::string>()),
                    parse_slot(je.at("slot").get<std::string>())},
                   std::nullopt};
      if (je.contains("score") && !je.at("score").is_null()) e.score = je.at("score").get<double>();
      g.edges.push_back(e);
    }
    if (j.contains("provenance") && !j.at("provenance").is_null()) {
      const auto& jp = j.at("provenance");
      g.provenance = CircuitProvenance{jp.at("fact").get<std::string>(),  jp.at("year").get<int>(),
                                       jp.at("template").get<std::string>(), jp.at("tau").get<double>(),
                                       jp.at("top_n").get<std::size_t>(), jp.at("metric").get<std::string>(),
                                       jp.at("ig_steps").get<int>(),      jp.at("n_pairs").get<int>()};
    }
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("circuit: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what());
  }
}

}  // namespace tempcircuit
