#include "tempcircuit/attribution.hpp"

#include "tempcircuit/format.hpp"
#include "tempcircuit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tempcircuit {

std::string_view metric_name(Metric m) { return m == Metric::LogitDiff ? "logit_diff" : "logprob"; }

Metric parse_metric(std::string_view name) {
  if (name == "logit_diff") return Metric::LogitDiff;
  if (name == "logprob" || name == "nll") return Metric::LogProb;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

namespace {

// The metric as a LossSpec plus the sign that orients it.
std::pair<LossSpec, double> loss_for(const PromptPair& pair, Metric metric) {
  if (metric == Metric::LogitDiff) return {LossSpec::logit_diff(pair.clean.answer, pair.corrupted.answer), 1.0};
  return {LossSpec::nll(pair.clean.answer), -1.0};
}

void check_pair(const PromptPair& pair) {
  if (pair.clean.tokens.size() != pair.corrupted.tokens.size()) {
    throw std::invalid_argument("prompt pair lengths differ");
  }
}

}  // namespace

double metric_value(const Mat& logits, const PromptPair& pair, Metric metric) {
  const auto [loss, sign] = loss_for(pair, metric);
  return sign * evaluate_loss(logits, loss);
}

void IGConfig::validate() const {
  if (ig_steps < 1) throw std::invalid_argument("ig_steps must be >= 1");
}

PathGradients path_gradients(const Weights& w, const PromptPair& pair, const IGConfig& ig) {
  ig.validate();
  check_pair(pair);
  const ModelConfig& cfg = w.config;
  const auto [loss, sign] = loss_for(pair, ig.metric);
  const Mat clean_emb = forward(w, pair.clean.tokens).cache.node_out[0];
  const Mat corr_emb = forward(w, pair.corrupted.tokens).cache.node_out[0];
  const int seq = static_cast<int>(clean_emb.rows());

  std::vector<Gradients> steps(ig.ig_steps);
  parallel_for(steps.size(), [&](std::size_t k) {
    const double alpha = (static_cast<double>(k) + 0.5) / ig.ig_steps;
    HookSpec hooks;
    hooks.add(PatchNodeOutput{NodeId::input(), 0, seq, corr_emb + alpha * (clean_emb - corr_emb)});
    const auto fwd = forward(w, pair.clean.tokens, hooks);
    steps[k] = backward(w, fwd.cache, hooks, loss, {.param_grads = false});
  });

  PathGradients out;
  out.slot_in.assign(slot_count(cfg), Mat::Zero(seq, cfg.d_model));
  out.input = Mat::Zero(seq, cfg.d_model);
  const double scale = sign / ig.ig_steps;
  for (const auto& g : steps) {
    for (int s = 0; s < slot_count(cfg); ++s) out.slot_in[s] += scale * g.slot_in[s];
    out.input += scale * g.node_out[0];
  }
  return out;
}

std::vector<double> score_edges(const ModelConfig& cfg, std::span<const Mat> deltas, const PathGradients& grads) {
  const auto edges = full_graph(cfg).edges;
  std::vector<double> scores(edges.size());
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const Edge& e = edges[i].edge;
    const Mat& d = deltas[node_index(cfg, e.src)];
    const Mat& g = grads.slot_in[slot_index(cfg, e.dst, e.slot)];
    scores[i] = d.cwiseProduct(g).sum();
    if (!std::isfinite(scores[i])) {
      throw NumericError("eap-ig: non-finite score on edge " + e.src.label() + "->" + e.dst.label() + "." +
                         std::string(slot_name(e.slot)));
    }
  }
  return scores;
}

EdgeScores eap_ig_scores(const Weights& w, std::span<const PromptPair> pairs, const IGConfig& ig) {
  if (pairs.empty()) throw std::invalid_argument("eap_ig_scores: no prompt pairs");
  const ModelConfig& cfg = w.config;
  EdgeScores out;
  out.n_layers = cfg.n_layers;
  out.n_heads = cfg.n_heads;
  for (const auto& e : full_graph(cfg).edges) out.edges.push_back(e.edge);
  out.scores.assign(out.edges.size(), 0.0);
  out.n_pairs = static_cast<int>(pairs.size());
  out.ig = ig;

  for (const auto& pair : pairs) {
    check_pair(pair);
    const auto clean = forward(w, pair.clean.tokens);
    const auto corrupted = forward(w, pair.corrupted.tokens);
    std::vector<Mat> deltas(node_count(cfg));
    for (int n = 0; n + 1 < node_count(cfg); ++n) deltas[n] = clean.cache.node_out[n] - corrupted.cache.node_out[n];
    const auto scores = score_edges(cfg, deltas, path_gradients(w, pair, ig));
    for (std::size_t i = 0; i < scores.size(); ++i) out.scores[i] += scores[i] / static_cast<double>(pairs.size());
  }
  return out;
}

double InputAttribution::completeness_error() const {
  const double delta = metric_clean - metric_corrupted;
  return std::abs(attribution - delta) / std::abs(delta);
}

InputAttribution input_attribution(const Weights& w, const PromptPair& pair, const IGConfig& ig) {
  const Mat clean_emb = forward(w, pair.clean.tokens).cache.node_out[0];
  const Mat corr_emb = forward(w, pair.corrupted.tokens).cache.node_out[0];
  const auto grads = path_gradients(w, pair, ig);
  InputAttribution out;
  out.attribution = (clean_emb - corr_emb).cwiseProduct(grads.input).sum();
  out.metric_clean = metric_value(forward(w, pair.clean.tokens).logits, pair, ig.metric);
  out.metric_corrupted = metric_value(forward(w, pair.corrupted.tokens).logits, pair, ig.metric);
  return out;
}

namespace {

double clean_logprob(const Mat& logits, TokenId answer) { return log_softmax(logits.row(logits.rows() - 1))(answer); }

}  // namespace

double brute_force_edge_score(const Weights& w, const PromptPair& pair, const Edge& edge) {
  check_pair(pair);
  if (!edge_is_legal(w.config, edge)) throw std::invalid_argument("brute_force_edge_score: edge not in the full graph");
  const auto clean = forward(w, pair.clean.tokens);
  const auto corrupted = forward(w, pair.corrupted.tokens);
  HookSpec hooks;
  hooks.add(PatchEdgeInput{edge, corrupted.cache.out(w.config, edge.src)});
  return clean_logprob(clean.logits, pair.clean.answer) -
         clean_logprob(forward(w, pair.clean.tokens, hooks).logits, pair.clean.answer);
}

std::vector<double> brute_force_scores(const Weights& w, const PromptPair& pair) {
  check_pair(pair);
  const ModelConfig& cfg = w.config;
  const auto clean = forward(w, pair.clean.tokens);
  const auto corrupted = forward(w, pair.corrupted.tokens);
  const double base = clean_logprob(clean.logits, pair.clean.answer);
  const auto edges = full_graph(cfg).edges;
  std::vector<double> scores(edges.size());
  parallel_for(edges.size(), [&](std::size_t i) {
    HookSpec hooks;
    hooks.add(PatchEdgeInput{edges[i].edge, corrupted.cache.out(cfg, edges[i].edge.src)});
    scores[i] = base - clean_logprob(forward(w, pair.clean.tokens, hooks).logits, pair.clean.answer);
  });
  return scores;
}

std::vector<PromptPair> temporal_pairs(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact, int year,
                                       const PromptTemplate& tmpl) {
  const std::string& target = fact.object_at(year);
  std::vector<PromptPair> pairs;
  for (const auto& [other, object] : fact.timeline) {
    if (object != target) pairs.push_back(make_contrast_pair(fb, tok, fact, year, other, tmpl));
  }
  if (pairs.empty()) throw std::invalid_argument("no temporal contrast for " + fact.subject);
  return pairs;
}

std::vector<PromptPair> invariant_pairs(const FactBase& fb, const Tokenizer& tok, const InvariantFact& fact, int year,
                                        const PromptTemplate& tmpl) {
  std::vector<PromptPair> pairs;
  for (const auto& other : fb.invariant) {
    if (other.relation == fact.relation && other.object != fact.object) {
      pairs.push_back(make_subject_contrast_pair(fb, tok, fact, other, year, tmpl));
    }
  }
  if (pairs.empty()) throw std::invalid_argument("no subject contrast for " + fact.subject);
  return pairs;
}

CircuitGraph circuit_from_scores(const ModelConfig& cfg, const EdgeScores& scores, const std::string& fact, int year,
                                const PromptTemplate& tmpl, const CircuitRequest& req) {
  CircuitGraph circuit = prune(full_graph(cfg), scores.scores, req.tau, req.top_n);
  circuit.provenance = CircuitProvenance{fact,      year, tmpl.id, req.tau, req.top_n, std::string(metric_name(req.ig.metric)),
                                         req.ig.ig_steps, scores.n_pairs};
  return circuit;
}

namespace {

CircuitGraph circuit_from_pairs(const Weights& w, std::span<const PromptPair> pairs, const std::string& fact, int year,
                                const PromptTemplate& tmpl, const CircuitRequest& req) {
  return circuit_from_scores(w.config, eap_ig_scores(w, pairs, req.ig), fact, year, tmpl, req);
}

}  // namespace

CircuitGraph extract_temporal_circuit(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                      const TemporalFact& fact, int year, const PromptTemplate& tmpl,
                                      const CircuitRequest& req) {
  const auto pairs = temporal_pairs(fb, tok, fact, year, tmpl);
  return circuit_from_pairs(w, pairs, fact.subject, year, tmpl, req);
}

void extract_temporal_circuit(const Weights&, const FactBase&, const Tokenizer&, const InvariantFact& fact, int,
                              const PromptTemplate&, const CircuitRequest&) {
  throw std::invalid_argument("no temporal contrast: " + fact.subject + " has a single object at every year");
}

CircuitGraph extract_invariant_circuit(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                       const InvariantFact& fact, int year, const PromptTemplate& tmpl,
                                       const CircuitRequest& req) {
  const auto pairs = invariant_pairs(fb, tok, fact, year, tmpl);
  return circuit_from_pairs(w, pairs, fact.subject, year, tmpl, req);
}

void write_scores_csv(std::ostream& out, const EdgeScores& scores) {
  out << "src,dst,slot,score\n";
  for (std::size_t i = 0; i < scores.edges.size(); ++i) {
    const Edge& e = scores.edges[i];
    out << e.src.label() << ',' << e.dst.label() << ',' << slot_name(e.slot) << ',' << fmt_num(scores.scores[i]) << '\n';
  }
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need two equal-length samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

}  // namespace tempcircuit
