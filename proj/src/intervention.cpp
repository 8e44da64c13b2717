#include "tempcircuit/intervention.hpp"

#include "tempcircuit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace tempcircuit {

HeadRef HeadRef::parse(std::string_view label) {
  const NodeId node = NodeId::parse(label);
  if (!node.is_head()) throw std::invalid_argument("not an attention head: " + std::string(label));
  return {node.layer, node.head};
}

void HeadRef::validate(const ModelConfig& cfg) const {
  if (layer < 0 || layer >= cfg.n_layers || head < 0 || head >= cfg.n_heads) {
    throw std::out_of_range("head " + label() + " outside the model");
  }
}

const CandidateLogProb& LogProbReport::target() const {
  const auto it = std::find_if(candidates.begin(), candidates.end(), [](const auto& c) { return c.is_target; });
  if (it == candidates.end()) throw std::logic_error("log-prob report without a target");
  return *it;
}

namespace {

RowVec final_log_probs(const Mat& logits) { return log_softmax(logits.row(logits.rows() - 1)); }

// Softmax of the candidates' log-probs.
std::vector<double> renormalize(const std::vector<double>& z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += p[i] = std::exp(z[i] - m);
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

LogProbReport ablate_heads_logprob(const Weights& w, std::span<const HeadRef> heads, std::span<const TokenId> tokens,
                                   std::span<const TokenId> candidates, TokenId target, const Tokenizer* tok) {
  if (candidates.empty()) throw std::invalid_argument("ablate_heads_logprob: no candidates");
  if (std::set<TokenId>(candidates.begin(), candidates.end()).size() != candidates.size()) {
    throw std::invalid_argument("ablate_heads_logprob: duplicate candidates");
  }
  if (std::find(candidates.begin(), candidates.end(), target) == candidates.end()) {
    throw std::invalid_argument("ablate_heads_logprob: target is not a candidate");
  }
  HookSpec hooks;
  for (const auto& h : heads) {
    h.validate(w.config);
    hooks.add(ZeroHeadOutput{h.node()});
  }
  const RowVec base = final_log_probs(forward(w, tokens).logits);
  const RowVec ablated = final_log_probs(forward(w, tokens, hooks).logits);

  LogProbReport report;
  report.heads.assign(heads.begin(), heads.end());
  std::vector<double> zb, za;
  for (TokenId c : candidates) {
    if (c < 0 || c >= w.config.vocab_size) throw std::out_of_range("candidate outside the vocabulary");
    zb.push_back(base(c));
    za.push_back(ablated(c));
  }
  const auto pb = renormalize(zb);
  const auto pa = renormalize(za);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    report.candidates.push_back({candidates[i], tok ? tok->word(candidates[i]) : std::to_string(candidates[i]),
                                 candidates[i] == target, zb[i], za[i], pb[i], pa[i]});
  }
  return report;
}

nlohmann::json logprob_report_json(const LogProbReport& report) {
  nlohmann::json j;
  j["heads"] = nlohmann::json::array();
  for (const auto& h : report.heads) j["heads"].push_back(h.label());
  j["candidates"] = nlohmann::json::array();
  for (const auto& c : report.candidates) {
    j["candidates"].push_back({{"token", c.word},
                               {"label", c.is_target ? "target" : "non-target"},
                               {"z_baseline", c.z_baseline},
                               {"z_ablated", c.z_ablated},
                               {"p_baseline", c.p_baseline},
                               {"p_ablated", c.p_ablated}});
  }
  return j;
}

AblationStudy ablation_study(const Weights& w, const FactBase& fb, const Tokenizer& tok, std::span<const HeadRef> heads,
                             const PromptTemplate& tmpl, std::span<const int> years, int invariant_year) {
  struct Job {
    RenderedPrompt prompt;
    std::vector<TokenId> candidates;
    bool temporal;
  };
  std::vector<Job> jobs;
  for (const auto& f : fb.temporal) {
    std::vector<TokenId> candidates;
    for (const auto& o : f.distinct_objects()) candidates.push_back(tok.id(o));
    for (int year : years) jobs.push_back({render_prompt(fb, tok, f, tmpl, TimeSpec::at_year(year)), candidates, true});
  }
  for (const auto& f : fb.invariant) {
    std::vector<TokenId> candidates;
    for (const auto& o : fb.invariant_candidates(f)) candidates.push_back(tok.id(o));
    const TimeSpec time = tmpl.has_time_slot() ? TimeSpec::at_year(invariant_year) : TimeSpec::none();
    jobs.push_back({render_prompt(fb, tok, f, tmpl, time), candidates, false});
  }

  AblationStudy study;
  study.reports.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    study.reports[i] = ablate_heads_logprob(w, heads, jobs[i].prompt.tokens, jobs[i].candidates, jobs[i].prompt.answer, &tok);
  });
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    study.prompts.push_back(tok.decode_text(jobs[i].prompt.tokens));
    AblationSummary& s = jobs[i].temporal ? study.temporal : study.invariant;
    s.baseline += study.reports[i].target().p_baseline;
    s.ablated += study.reports[i].target().p_ablated;
    ++s.n_prompts;
  }
  for (auto* s : {&study.temporal, &study.invariant}) {
    if (s->n_prompts > 0) {
      s->baseline /= s->n_prompts;
      s->ablated /= s->n_prompts;
    }
  }
  return study;
}

nlohmann::json ablation_study_json(const AblationStudy& study) {
  const auto summary = [](const AblationSummary& s) {
    return nlohmann::json{{"mean_p_target_baseline", s.baseline}, {"mean_p_target_ablated", s.ablated}, {"prompts", s.n_prompts}};
  };
  nlohmann::json j{{"temporal", summary(study.temporal)}, {"invariant", summary(study.invariant)}};
  j["reports"] = nlohmann::json::array();
  for (std::size_t i = 0; i < study.reports.size(); ++i) {
    nlohmann::json r = logprob_report_json(study.reports[i]);
    r["prompt"] = study.prompts[i];
    j["reports"].push_back(std::move(r));
  }
  return j;
}

namespace {

std::vector<int> head_counts(std::span<const CircuitGraph> circuits, int n_layers, int n_heads) {
  std::vector<int> counts(static_cast<std::size_t>(n_layers) * n_heads, 0);
  for (const auto& c : circuits) {
    for (const auto& n : c.heads()) {
      if (n.layer < n_layers && n.head < n_heads) ++counts[n.layer * n_heads + n.head];
    }
  }
  return counts;
}

}  // namespace

std::vector<double> head_exhibition(std::span<const CircuitGraph> circuits, int n_layers, int n_heads) {
  const auto counts = head_counts(circuits, n_layers, n_heads);
  std::vector<double> frac(counts.size(), 0.0);
  if (circuits.empty()) return frac;
  for (std::size_t i = 0; i < counts.size(); ++i) frac[i] = counts[i] / static_cast<double>(circuits.size());
  return frac;
}

HeadDiscovery find_temporal_heads(std::span<const CircuitGraph> temporal, std::span<const CircuitGraph> invariant,
                                  double ratio, double backup_ratio) {
  if (temporal.size() < 2) throw std::invalid_argument("find_temporal_heads: need at least two temporal circuits");
  if (invariant.empty()) throw std::invalid_argument("find_temporal_heads: need at least one invariant circuit");
  if (!(ratio > 0.0 && ratio <= 1.0) || !(backup_ratio > 0.0 && backup_ratio <= 1.0)) {
    throw std::invalid_argument("find_temporal_heads: ratios must lie in (0, 1]");
  }
  int n_layers = 0, n_heads = 0;
  for (const auto* set : {&temporal, &invariant}) {
    for (const auto& c : *set) {
      n_layers = std::max(n_layers, c.n_layers);
      n_heads = std::max(n_heads, c.n_heads);
    }
  }
  const auto in_temporal = head_counts(temporal, n_layers, n_heads);
  const auto in_invariant = head_counts(invariant, n_layers, n_heads);
  // Smallest circuit count meeting a ratio; the epsilon keeps 0.8 * 10 at 8.
  const auto needed = [&](double r) { return static_cast<int>(std::ceil(r * static_cast<double>(temporal.size()) - 1e-9)); };

  HeadDiscovery out;
  for (int l = 0; l < n_layers; ++l) {
    for (int h = 0; h < n_heads; ++h) {
      const std::size_t i = static_cast<std::size_t>(l) * n_heads + h;
      if (in_invariant[i] > 0) continue;
      if (in_temporal[i] >= needed(ratio)) {
        out.temporal.push_back({l, h});
      } else if (in_temporal[i] >= needed(backup_ratio)) {
        out.backup.push_back({l, h});
      }
    }
  }
  return out;
}

Mat attention_map(const Weights& w, std::span<const TokenId> tokens, const HeadRef& head) {
  head.validate(w.config);
  return forward(w, tokens).cache.heads[head.layer][head.head].attn;
}

Mat time_attention(const Weights& w, std::span<const RenderedPrompt> prompts) {
  const ModelConfig& cfg = w.config;
  Mat mass = Mat::Zero(cfg.n_layers, cfg.n_heads);
  int used = 0;
  for (const auto& p : prompts) {
    if (p.time_pos < 0) continue;
    const auto fwd = forward(w, p.tokens);
    const int last = static_cast<int>(p.tokens.size()) - 1;
    for (int l = 0; l < cfg.n_layers; ++l) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        for (int t : p.time_span()) mass(l, h) += fwd.cache.heads[l][h].attn(last, t);
      }
    }
    ++used;
  }
  if (used == 0) throw std::invalid_argument("time_attention: no prompt has a time condition");
  return mass / static_cast<double>(used);
}

Vec extract_attn_value(const Weights& w, std::span<const RenderedPrompt> sources, const HeadRef& head) {
  head.validate(w.config);
  if (sources.empty()) throw std::invalid_argument("extract_attn_value: no source prompts");
  Vec total = Vec::Zero(w.config.d_head);
  for (const auto& p : sources) {
    if (p.time_pos < 0) throw std::invalid_argument("extract_attn_value: source prompt has no time condition");
    total += forward(w, p.tokens).cache.attn_value(head.layer, head.head).row(p.time_pos).transpose();
  }
  return total / static_cast<double>(sources.size());
}

void EditSpec::validate(const ModelConfig& cfg) const {
  if (sources.empty()) throw std::invalid_argument("edit: need at least one source prompt");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("edit: lambda must be finite and >= 0");
  if (target.time_pos < 0) throw std::invalid_argument("edit: temporal span not found in target prompt");
  if (max_new_tokens < 1) throw std::invalid_argument("edit: max_new_tokens must be >= 1");
  if (expected < 0 || expected >= cfg.vocab_size) throw std::out_of_range("edit: expected answer outside the vocabulary");
  head.validate(cfg);
}

namespace {

double prob_of(const Mat& logits, TokenId t) { return std::exp(final_log_probs(logits)(t)); }

HookSpec injection(const EditSpec& spec, const Vec& value) {
  HookSpec hooks;
  if (spec.lambda != 0.0) {
    hooks.add(AddToHeadValue{spec.head.layer, spec.head.head, spec.target.time_pos, value, spec.lambda, spec.tap});
  }
  return hooks;
}

}  // namespace

EditReport inject_and_generate(const Weights& w, const EditSpec& spec) {
  spec.validate(w.config);
  const Vec value = extract_attn_value(w, spec.sources, spec.head);
  const HookSpec hooks = injection(spec, value);
  EditReport report;
  report.p_before = prob_of(forward(w, spec.target.tokens).logits, spec.expected);
  report.p_after = prob_of(forward(w, spec.target.tokens, hooks).logits, spec.expected);
  report.first_token_shift = report.p_after > report.p_before;
  report.generated = generate_greedy(w, spec.target.tokens, spec.max_new_tokens, hooks);
  report.text_contains_answer =
      std::find(report.generated.begin(), report.generated.end(), spec.expected) != report.generated.end();
  return report;
}

nlohmann::json edit_report_json(const EditReport& report, const Tokenizer* tok) {
  nlohmann::json generated = nlohmann::json::array();
  for (TokenId t : report.generated) {
    if (tok) {
      generated.push_back(tok->word(t));
    } else {
      generated.push_back(t);
    }
  }
  return {{"p_before", report.p_before},
          {"p_after", report.p_after},
          {"first_token_shift", report.first_token_shift},
          {"text_contains_answer", report.text_contains_answer},
          {"generated", generated}};
}

std::vector<EditCase> make_edit_cases(const FactBase& fb, const Tokenizer& tok, const PromptTemplate& tmpl,
                                      int from_year, int to_year, int n_sources, int max_cases) {
  if (n_sources < 1) throw std::invalid_argument("make_edit_cases: need at least one source");
  const auto n = static_cast<int>(fb.temporal.size());
  if (n_sources >= n) throw std::invalid_argument("make_edit_cases: more sources than other facts");
  std::vector<EditCase> cases;
  for (int i = 0; i < n && static_cast<int>(cases.size()) < max_cases; ++i) {
    const auto& fact = fb.temporal[i];
    if (fact.object_at(from_year) == fact.object_at(to_year)) continue;
    EditCase c;
    c.target = render_prompt(fb, tok, fact, tmpl, TimeSpec::at_year(from_year));
    c.expected = tok.id(fact.object_at(to_year));
    for (int k = 1; k <= n_sources; ++k) {
      c.sources.push_back(render_prompt(fb, tok, fb.temporal[(i + k) % n], tmpl, TimeSpec::at_year(to_year)));
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

Eigen::MatrixXi edit_sweep(const Weights& w, std::span<const EditCase> cases, std::span<const double> lambdas,
                           ValueTap tap) {
  const ModelConfig& cfg = w.config;
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(cfg.n_layers, cfg.n_heads);
  parallel_for(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads, [&](std::size_t i) {
    const HeadRef head{static_cast<int>(i) / cfg.n_heads, static_cast<int>(i) % cfg.n_heads};
    int hits = 0;
    for (const auto& c : cases) {
      const double before = prob_of(forward(w, c.target.tokens).logits, c.expected);
      const Vec value = extract_attn_value(w, c.sources, head);
      for (double lambda : lambdas) {
        EditSpec spec{c.sources, c.target, c.expected, head, lambda, tap, 1};
        spec.validate(cfg);
        if (prob_of(forward(w, c.target.tokens, injection(spec, value)).logits, c.expected) > before) ++hits;
      }
    }
    counts(head.layer, head.head) = hits;
  });
  return counts;
}

void write_success_csv(std::ostream& out, const Eigen::MatrixXi& counts) {
  out << "layer";
  for (Eigen::Index h = 0; h < counts.cols(); ++h) out << ',' << h;
  out << '\n';
  for (Eigen::Index l = 0; l < counts.rows(); ++l) {
    out << l;
    for (Eigen::Index h = 0; h < counts.cols(); ++h) out << ',' << counts(l, h);
    out << '\n';
  }
}

}  // namespace tempcircuit
