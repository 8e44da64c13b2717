#pragma once

#include "tempcircuit/dataset.hpp"
#include "tempcircuit/graph.hpp"
#include "tempcircuit/model.hpp"

#include <nlohmann/json.hpp>

#include <ostream>
#include <vector>

namespace tempcircuit {

// Attention head, 0-based on both axes; printed "aL.hH".
struct HeadRef {
  int layer = 0;
  int head = 0;

  NodeId node() const { return NodeId::attn(layer, head); }
  std::string label() const { return node().label(); }
  static HeadRef parse(std::string_view label);
  void validate(const ModelConfig& cfg) const;

  auto operator<=>(const HeadRef&) const = default;
};

struct CandidateLogProb {
  TokenId token = 0;
  std::string word;
  bool is_target = false;
  double z_baseline = 0.0;  // log p(o | prompt), full vocabulary
  double z_ablated = 0.0;
  double p_baseline = 0.0;  // softmax of z over the candidates
  double p_ablated = 0.0;
};

struct LogProbReport {
  std::vector<HeadRef> heads;
  std::vector<CandidateLogProb> candidates;

  const CandidateLogProb& target() const;
};

// Zero-ablates `heads` and compares candidate log-probs at the final position
// against the unablated run.
LogProbReport ablate_heads_logprob(const Weights& w, std::span<const HeadRef> heads, std::span<const TokenId> tokens,
                                   std::span<const TokenId> candidates, TokenId target, const Tokenizer* tok = nullptr);

nlohmann::json logprob_report_json(const LogProbReport& report);

struct AblationSummary {
  double baseline = 0.0;  // mean target p-hat
  double ablated = 0.0;
  int n_prompts = 0;
};

struct AblationStudy {
  AblationSummary temporal;
  AblationSummary invariant;
  std::vector<std::string> prompts;  // rendered text, parallel to reports
  std::vector<LogProbReport> reports;
};

// Every temporal fact at each of `years` (candidates: the fact's objects over
// its timeline) and every invariant fact at `invariant_year` (candidates: the
// objects sharing its relation).
AblationStudy ablation_study(const Weights& w, const FactBase& fb, const Tokenizer& tok, std::span<const HeadRef> heads,
                             const PromptTemplate& tmpl, std::span<const int> years, int invariant_year);
nlohmann::json ablation_study_json(const AblationStudy& study);

struct HeadDiscovery {
  std::vector<HeadRef> temporal;
  std::vector<HeadRef> backup;
};

// Temporal heads appear in at least `ratio` of the temporal circuits and in no
// invariant circuit; backup heads satisfy the same rule at `backup_ratio` and
// are not temporal heads.
HeadDiscovery find_temporal_heads(std::span<const CircuitGraph> temporal, std::span<const CircuitGraph> invariant,
                                  double ratio = 1.0, double backup_ratio = 0.7);

// Fraction of `circuits` containing each head, indexed layer * n_heads + head.
std::vector<double> head_exhibition(std::span<const CircuitGraph> circuits, int n_layers, int n_heads);

// seq x seq attention weights, row = query.
Mat attention_map(const Weights& w, std::span<const TokenId> tokens, const HeadRef& head);

// Mean attention mass the final position puts on the time condition, per
// head (n_layers x n_heads).
Mat time_attention(const Weights& w, std::span<const RenderedPrompt> prompts);

// Mean of the head's value vector at each prompt's last time-condition token.
Vec extract_attn_value(const Weights& w, std::span<const RenderedPrompt> sources, const HeadRef& head);

struct EditSpec {
  std::vector<RenderedPrompt> sources;
  RenderedPrompt target;
  TokenId expected = 0;  // w*, the answer the edit should produce
  HeadRef head;
  double lambda = 1.0;
  ValueTap tap = ValueTap::Value;
  int max_new_tokens = 3;

  void validate(const ModelConfig& cfg) const;
};

struct EditReport {
  double p_before = 0.0;  // P(w* | target)
  double p_after = 0.0;
  bool first_token_shift = false;  // p_after > p_before
  bool text_contains_answer = false;
  std::vector<TokenId> generated;
};

EditReport inject_and_generate(const Weights& w, const EditSpec& spec);

nlohmann::json edit_report_json(const EditReport& report, const Tokenizer* tok = nullptr);

// One edit problem; the sweep injects at every head with every lambda.
struct EditCase {
  std::vector<RenderedPrompt> sources;
  RenderedPrompt target;
  TokenId expected = 0;
};

// Wrong-year edit problems. Each target is a temporal fact rendered at
// `from_year` whose object differs at `to_year`; its sources are the next
// `n_sources` facts in fact-base order, rendered at `to_year`.
std::vector<EditCase> make_edit_cases(const FactBase& fb, const Tokenizer& tok, const PromptTemplate& tmpl,
                                      int from_year, int to_year, int n_sources, int max_cases);

// counts(layer, head) = number of (case, lambda) runs whose P(w*) rose.
Eigen::MatrixXi edit_sweep(const Weights& w, std::span<const EditCase> cases, std::span<const double> lambdas,
                           ValueTap tap = ValueTap::Value);

// Header "layer,0,1,...", one row per layer.
void write_success_csv(std::ostream& out, const Eigen::MatrixXi& counts);

}  // namespace tempcircuit
