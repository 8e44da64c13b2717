#include "tempcircuit/tracing.hpp"

#include "tempcircuit/format.hpp"
#include "tempcircuit/parallel.hpp"
#include "tempcircuit/rng.hpp"

#include <algorithm>
#include <cmath>

namespace tempcircuit {

void CorruptionSpec::validate(int seq_len) const {
  for (int p : positions) {
    if (p < 0 || p >= seq_len) throw std::out_of_range("corruption position " + std::to_string(p) + " outside prompt");
  }
  if (mode == CorruptionMode::Noise && sigma && !(*sigma >= 0.0 && std::isfinite(*sigma))) {
    throw std::invalid_argument("corruption sigma must be finite and >= 0");
  }
}

double embedding_std(const Weights& w) {
  const double n = static_cast<double>(w.tok_emb.size());
  const double mean = w.tok_emb.sum() / n;
  return std::sqrt((w.tok_emb.array() - mean).square().sum() / n);
}

std::string_view restore_kind_name(RestoreKind kind) {
  switch (kind) {
    case RestoreKind::Residual:
      return "residual";
    case RestoreKind::MlpWindow:
      return "mlp";
    case RestoreKind::AttnWindow:
      return "attn";
  }
  return "?";
}

RestoreKind parse_restore_kind(std::string_view name) {
  for (auto k : {RestoreKind::Residual, RestoreKind::MlpWindow, RestoreKind::AttnWindow}) {
    if (restore_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown restore kind: " + std::string(name));
}

void RestoreSpec::validate() const {
  if (window < 1) throw std::invalid_argument("restore window must be >= 1");
}

std::string_view span_kind_name(SpanKind kind) {
  switch (kind) {
    case SpanKind::Subject:
      return "subject";
    case SpanKind::Relation:
      return "relation";
    case SpanKind::Object:
      return "object";
  }
  return "?";
}

namespace {

struct CorruptedInput {
  std::vector<TokenId> tokens;
  HookSpec hooks;
};

CorruptedInput corrupt(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& spec) {
  spec.validate(static_cast<int>(tokens.size()));
  CorruptedInput out{{tokens.begin(), tokens.end()}, {}};
  if (spec.mode == CorruptionMode::TokenReplace) {
    if (spec.replacement < 0 || spec.replacement >= w.config.vocab_size) {
      throw std::out_of_range("replacement token outside the vocabulary");
    }
    for (int p : spec.positions) out.tokens[p] = spec.replacement;
    return out;
  }
  const double sigma = spec.sigma.value_or(3.0 * embedding_std(w));
  const Mat clean_input = forward(w, tokens).cache.node_out[0];
  SplitMix64 rng(spec.seed);
  for (int p : spec.positions) {
    Mat row = clean_input.row(p);
    for (Eigen::Index j = 0; j < row.cols(); ++j) row(0, j) += sigma * rng.normal();
    out.hooks.add(PatchNodeOutput{NodeId::input(), p, p + 1, std::move(row)});
  }
  return out;
}

double target_prob(const Mat& logits, TokenId target) {
  return std::exp(log_softmax(logits.row(logits.rows() - 1))(target));
}

void check_target(const Weights& w, TokenId target) {
  if (target < 0 || target >= w.config.vocab_size) throw std::out_of_range("target token outside the vocabulary");
}

void add_restores(const ModelConfig& cfg, const ActivationCache& clean, const RestoreSpec& restore, int position,
                  int layer, HookSpec& hooks) {
  if (restore.kind == RestoreKind::Residual) {
    hooks.add(RestoreResidual{layer, position, position + 1, clean.resid_pre[layer].row(position)});
    return;
  }
  const int top = std::min(layer + restore.window, cfg.n_layers);
  for (int l = layer; l < top; ++l) {
    if (restore.kind == RestoreKind::MlpWindow) {
      const NodeId mlp = NodeId::mlp(l);
      hooks.add(PatchNodeOutput{mlp, position, position + 1, clean.out(cfg, mlp).row(position)});
    } else {
      for (int h = 0; h < cfg.n_heads; ++h) {
        const NodeId head = NodeId::attn(l, h);
        hooks.add(PatchNodeOutput{head, position, position + 1, clean.out(cfg, head).row(position)});
      }
    }
  }
}

void check_layer(const ModelConfig& cfg, int layer) {
  if (layer < 0 || layer >= cfg.n_layers) throw std::out_of_range("restore layer outside the model");
}

}  // namespace

double run_clean(const Weights& w, std::span<const TokenId> tokens, TokenId target) {
  check_target(w, target);
  return target_prob(forward(w, tokens).logits, target);
}

double run_corrupted(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                     TokenId target) {
  check_target(w, target);
  const auto input = corrupt(w, tokens, corruption);
  return target_prob(forward(w, input.tokens, input.hooks).logits, target);
}

double run_restored(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                    const RestoreSpec& restore, std::span<const int> positions, int layer, TokenId target) {
  check_target(w, target);
  restore.validate();
  check_layer(w.config, layer);
  const auto clean = forward(w, tokens);
  auto input = corrupt(w, tokens, corruption);
  for (int p : positions) {
    if (p < 0 || p >= static_cast<int>(tokens.size())) throw std::out_of_range("restore position outside prompt");
    add_restores(w.config, clean.cache, restore, p, layer, input.hooks);
  }
  return target_prob(forward(w, input.tokens, input.hooks).logits, target);
}

TraceGrid trace(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                const RestoreSpec& restore, TokenId target) {
  check_target(w, target);
  restore.validate();
  const ModelConfig& cfg = w.config;
  const int seq = static_cast<int>(tokens.size());
  const auto clean = forward(w, tokens);
  const auto input = corrupt(w, tokens, corruption);

  TraceGrid grid;
  grid.target = target;
  grid.restore = restore;
  grid.p_clean = target_prob(clean.logits, target);
  grid.p_corr = target_prob(forward(w, input.tokens, input.hooks).logits, target);
  grid.values = Mat::Zero(seq, cfg.n_layers);
  parallel_for(static_cast<std::size_t>(seq) * cfg.n_layers, [&](std::size_t cell) {
    const int t = static_cast<int>(cell) / cfg.n_layers;
    const int l = static_cast<int>(cell) % cfg.n_layers;
    HookSpec hooks = input.hooks;
    add_restores(cfg, clean.cache, restore, t, l, hooks);
    grid.values(t, l) = target_prob(forward(w, input.tokens, hooks).logits, target);
  });
  return grid;
}

std::vector<TracedPrompt> trace_suite(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                      const TemporalFact& fact, std::span<const int> years, const PromptTemplate& tmpl,
                                      const TraceOptions& opts) {
  if (!tmpl.has_time_slot()) throw std::invalid_argument("trace_suite: template " + tmpl.id + " has no time slot");
  std::vector<TracedPrompt> out;
  for (int year : years) {
    const RenderedPrompt prompt = render_prompt(fb, tok, fact, tmpl, TimeSpec::at_year(year));
    for (SpanKind span : {SpanKind::Subject, SpanKind::Relation, SpanKind::Object}) {
      TracedPrompt base;
      base.span = span;
      base.year = year;
      base.words = prompt.words;
      std::vector<TokenId> tokens = prompt.tokens;
      if (span == SpanKind::Subject) {
        base.span_positions = {prompt.subject_pos};
      } else if (span == SpanKind::Relation) {
        base.span_positions = {prompt.relation_pos};
      } else {
        base.span_positions = {static_cast<int>(tokens.size())};
        tokens.push_back(tok.id(Tokenizer::kPlaceholderObject));
        base.words.emplace_back(Tokenizer::kPlaceholderObject);
      }
      base.corrupted = base.span_positions;
      base.corrupted.push_back(prompt.time_pos);
      std::sort(base.corrupted.begin(), base.corrupted.end());

      CorruptionSpec corruption{base.corrupted, CorruptionMode::Noise, opts.sigma, Tokenizer::kPad, opts.seed};
      for (RestoreKind kind : {RestoreKind::Residual, RestoreKind::MlpWindow, RestoreKind::AttnWindow}) {
        TracedPrompt traced = base;
        traced.grid = trace(w, tokens, corruption, RestoreSpec{kind, opts.window}, prompt.answer);
        out.push_back(std::move(traced));
      }
    }
  }
  return out;
}

void write_grid_csv(std::ostream& out, const TraceGrid& grid, std::span<const std::string> words) {
  if (static_cast<Eigen::Index>(words.size()) != grid.values.rows()) {
    throw std::invalid_argument("write_grid_csv: one word per grid row required");
  }
  out << "position,token";
  for (Eigen::Index l = 0; l < grid.values.cols(); ++l) out << ',' << l;
  out << '\n';
  for (Eigen::Index t = 0; t < grid.values.rows(); ++t) {
    out << t << ',' << words[t];
    for (Eigen::Index l = 0; l < grid.values.cols(); ++l) out << ',' << fmt_num(grid.values(t, l));
    out << '\n';
  }
}

}  // namespace tempcircuit
