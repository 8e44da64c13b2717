#pragma once

#include "tempcircuit/dataset.hpp"
#include "tempcircuit/graph.hpp"
#include "tempcircuit/model.hpp"

#include <ostream>
#include <vector>

namespace tempcircuit {

// What the attribution differentiates. Both read the final position and are
// oriented so the clean prompt scores higher than the corrupted one.
enum class Metric : std::uint8_t {
  LogitDiff,  // logit(clean answer) - logit(corrupted answer)
  LogProb,    // log p(clean answer)
};

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

double metric_value(const Mat& logits, const PromptPair& pair, Metric metric);

struct IGConfig {
  int ig_steps = 100;
  Metric metric = Metric::LogitDiff;

  void validate() const;
};

struct EdgeScores {
  int n_layers = 0;
  int n_heads = 0;
  std::vector<Edge> edges;  // full_graph order
  std::vector<double> scores;
  int n_pairs = 0;
  IGConfig ig;
};

// Mean over the interpolation path of dL/d(slot input) for every slot, with
// the input embeddings moving from the corrupted (alpha = 0) to the clean
// prompt (alpha = 1), sampled at midpoints alpha = (k - 1/2) / steps.
struct PathGradients {
  std::vector<Mat> slot_in;  // by slot_index
  Mat input;                 // dL/d(input node output)
};
PathGradients path_gradients(const Weights& w, const PromptPair& pair, const IGConfig& ig);

// Edge scores from precomputed per-node activation deltas (clean minus
// corrupted, by node_index) and mean gradients.
std::vector<double> score_edges(const ModelConfig& cfg, std::span<const Mat> deltas, const PathGradients& grads);

// EAP-IG: score(u -> v.slot) = sum over positions of (clean_u - corrupted_u)
// . mean path gradient at v.slot, averaged over pairs.
EdgeScores eap_ig_scores(const Weights& w, std::span<const PromptPair> pairs, const IGConfig& ig);

// Integrated gradients on the input embeddings; completeness says
// `attribution` approaches metric(clean) - metric(corrupted).
struct InputAttribution {
  double attribution = 0.0;
  double metric_clean = 0.0;
  double metric_corrupted = 0.0;

  double completeness_error() const;
};
InputAttribution input_attribution(const Weights& w, const PromptPair& pair, const IGConfig& ig);

// log p(clean answer | clean run) - log p(clean answer | run with only this
// edge's destination slot reading the corrupted source output).
double brute_force_edge_score(const Weights& w, const PromptPair& pair, const Edge& edge);
std::vector<double> brute_force_scores(const Weights& w, const PromptPair& pair);

struct CircuitRequest {
  IGConfig ig;
  double tau = 0.1;
  std::size_t top_n = 5000;
};

// Prunes the full graph with `scores` and records how the circuit was made.
CircuitGraph circuit_from_scores(const ModelConfig& cfg, const EdgeScores& scores, const std::string& fact, int year,
                                const PromptTemplate& tmpl, const CircuitRequest& req);

// Contrast pairs for one temporal fact at `year`: one per other year whose
// object differs. Throws std::invalid_argument("no temporal contrast ...").
std::vector<PromptPair> temporal_pairs(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact, int year,
                                       const PromptTemplate& tmpl);
// Subject-contrast pairs for one invariant fact: one per other invariant fact
// sharing the relation with a different object.
std::vector<PromptPair> invariant_pairs(const FactBase& fb, const Tokenizer& tok, const InvariantFact& fact, int year,
                                        const PromptTemplate& tmpl);

CircuitGraph extract_temporal_circuit(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                      const TemporalFact& fact, int year, const PromptTemplate& tmpl,
                                      const CircuitRequest& req);
// Invariant facts have no year-to-year contrast; this always throws.
[[noreturn]] void extract_temporal_circuit(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                           const InvariantFact& fact, int year, const PromptTemplate& tmpl,
                                           const CircuitRequest& req);
CircuitGraph extract_invariant_circuit(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                       const InvariantFact& fact, int year, const PromptTemplate& tmpl,
                                       const CircuitRequest& req);

void write_scores_csv(std::ostream& out, const EdgeScores& scores);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace tempcircuit
