#include "helpers.hpp"
#include "tempcircuit/graph.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace tempcircuit;
using tc_test::lively_weights;
using tc_test::small_config;

namespace {

ModelConfig dims(int layers, int heads) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_model = 4;
  cfg.d_head = 2;
  cfg.d_mlp = 4;
  cfg.vocab_size = 5;
  return cfg;
}

// Independent count: every destination slot reads every node that finishes
// before it in the residual stream.
std::size_t enumerate_edges(int L, int H) {
  std::size_t total = 0;
  for (int l = 0; l < L; ++l) {
    const std::size_t before_heads = 1 + static_cast<std::size_t>(l) * (H + 1);
    total += 3 * H * before_heads;       // q, k, v of each head in layer l
    total += before_heads + H;           // mlp l also reads layer l's heads
  }
  total += 1 + static_cast<std::size_t>(L) * (H + 1);  // logits
  return total;
}

}  // namespace

TEST_CASE("one layer, one head: the eight edges") {
  const CircuitGraph g = full_graph(dims(1, 1));
  const auto in = NodeId::input();
  const auto a = NodeId::attn(0, 0);
  const auto m = NodeId::mlp(0);
  const auto out = NodeId::logits();
  const std::vector<Edge> expected{{in, a, EdgeSlot::Q},        {in, a, EdgeSlot::K},        {in, a, EdgeSlot::V},
                                   {in, m, EdgeSlot::MlpIn},    {a, m, EdgeSlot::MlpIn},     {in, out, EdgeSlot::LogitsIn},
                                   {a, out, EdgeSlot::LogitsIn}, {m, out, EdgeSlot::LogitsIn}};
  REQUIRE(g.edges.size() == 8);
  for (const auto& e : expected) CHECK(g.has_edge(e));
  CHECK(full_edge_count(dims(1, 1)) == 8);
}

TEST_CASE("edge count: closed form, enumeration and construction agree") {
  for (int L = 1; L <= 6; ++L) {
    for (int H = 1; H <= 6; ++H) {
      const ModelConfig cfg = dims(L, H);
      const std::size_t counted = enumerate_edges(L, H);
      CHECK(full_edge_count(cfg) == counted);
      CHECK(full_graph(cfg).edges.size() == counted);
    }
  }
}

TEST_CASE("full graph edges are legal, ordered and unique") {
  const ModelConfig cfg = dims(3, 2);
  const CircuitGraph g = full_graph(cfg);
  g.validate();
  CHECK(g.nodes.size() == static_cast<std::size_t>(node_count(cfg)));
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    CHECK(edge_is_legal(cfg, g.edges[i].edge));
    if (i > 0) CHECK(edge_less(cfg, g.edges[i - 1].edge, g.edges[i].edge));
  }
}

TEST_CASE("prune keeps edges strictly above tau, then the top_n highest") {
  const CircuitGraph full = full_graph(dims(1, 1));
  const std::vector<double> scores{0.5, 0.1, 0.9, 0.2, 0.05, 0.7, 0.1, 0.3};

  const CircuitGraph above = prune(full, scores, 0.1, kNoLimit);
  CHECK(above.edges.size() == 5);
  for (const auto& e : above.edges) CHECK(*e.score > 0.1);

  const CircuitGraph top = prune(full, scores, 0.1, 2);
  REQUIRE(top.edges.size() == 2);
  CHECK(top.has_edge(full.edges[2].edge));
  CHECK(top.has_edge(full.edges[5].edge));

  const CircuitGraph none = prune(full, scores, 1.0, kNoLimit);
  CHECK(none.edges.empty());
  CHECK(none.nodes == std::vector<NodeId>{NodeId::input(), NodeId::logits()});
  none.validate();
}

TEST_CASE("prune: ties at the cut keep edge order") {
  const CircuitGraph full = full_graph(dims(1, 1));
  const std::vector<double> scores(8, 1.0);
  const CircuitGraph top = prune(full, scores, 0.0, 3);
  REQUIRE(top.edges.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(top.edges[i].edge == full.edges[i].edge);
}

TEST_CASE("prune rejects misaligned or non-finite scores") {
  const CircuitGraph full = full_graph(dims(1, 1));
  CHECK_THROWS_AS(prune(full, std::vector<double>(7, 1.0), 0.0, kNoLimit), std::invalid_argument);
  std::vector<double> bad(8, 1.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(prune(full, bad, 0.0, kNoLimit), NumericError);
}

TEST_CASE("running the full graph gives the clean logits, the empty graph the corrupted ones") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const std::vector<TokenId> clean{1, 4, 7, 2, 9};
  const std::vector<TokenId> corrupt{1, 5, 7, 2, 9};
  const auto c = forward(w, clean);
  const auto k = forward(w, corrupt);

  const CircuitGraph full = full_graph(cfg);
  CHECK((run_with_circuit(w, full, c.cache, k.cache) - c.logits).cwiseAbs().maxCoeff() < 1e-12);

  const CircuitGraph empty = prune(full, std::vector<double>(full.edges.size(), 0.0), 1.0, kNoLimit);
  CHECK((run_with_circuit(w, empty, c.cache, k.cache) - k.logits).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dropping one edge changes only what flows through it") {
  const ModelConfig cfg = small_config();
  const Weights w = lively_weights(cfg);
  const std::vector<TokenId> clean{1, 4, 7, 2, 9};
  const std::vector<TokenId> corrupt{3, 4, 7, 2, 9};
  const auto c = forward(w, clean);
  const auto k = forward(w, corrupt);

  const CircuitGraph full = full_graph(cfg);
  std::vector<double> scores(full.edges.size(), 1.0);
  const Edge dropped{NodeId::attn(1, 0), NodeId::logits(), EdgeSlot::LogitsIn};
  const auto it = std::ranges::find(full.edges, dropped, &ScoredEdge::edge);
  REQUIRE(it != full.edges.end());
  scores[static_cast<std::size_t>(it - full.edges.begin())] = 0.0;
  const Mat logits = run_with_circuit(w, prune(full, scores, 0.5, kNoLimit), c.cache, k.cache);

  // Only the direct path from a1.h0 to the logits is swapped, so the logits
  // move by exactly that head's output difference through the unembedding.
  const Mat expected =
      c.logits + (k.cache.out(cfg, NodeId::attn(1, 0)) - c.cache.out(cfg, NodeId::attn(1, 0))) * w.unembed;
  CHECK((logits - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("circuit JSON round-trip and DOT export") {
  const ModelConfig cfg = dims(2, 2);
  const CircuitGraph full = full_graph(cfg);
  std::vector<double> scores(full.edges.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>(i % 7) / 7.0;
  CircuitGraph c = prune(full, scores, 0.4, 10);
  c.provenance = CircuitProvenance{"S3", 2004, "fundamental", 0.4, 10, "logit_diff", 100, 5};

  CHECK(graph_from_json(export_json(c)) == c);
  CHECK(graph_from_json(nlohmann::json::parse(export_json(c).dump())) == c);

  const std::string dot = export_dot(c);
  CHECK(dot.starts_with("digraph"));
  CHECK(static_cast<std::size_t>(std::ranges::count(dot, '>')) >= c.edges.size());
}

TEST_CASE("malformed circuit JSON raises ParseError") {
  CHECK_THROWS_AS(graph_from_json(nlohmann::json::object()), ParseError);
  nlohmann::json j = export_json(full_graph(dims(1, 1)));
  j["edges"][0]["src"] = "a7.h0";
  CHECK_THROWS_AS(graph_from_json(j), ParseError);
}
