#pragma once

#include "tempcircuit/dataset.hpp"
#include "tempcircuit/model.hpp"

#include <optional>
#include <ostream>
#include <vector>

namespace tempcircuit {

enum class CorruptionMode : std::uint8_t { Noise, TokenReplace };

struct CorruptionSpec {
  std::vector<int> positions;  // corrupted token positions, need not be contiguous
  CorruptionMode mode = CorruptionMode::Noise;
  // Noise std; unset means 3x the std of the token-embedding entries.
  std::optional<double> sigma;
  TokenId replacement = Tokenizer::kPad;  // TokenReplace only
  std::uint64_t seed = 0;

  void validate(int seq_len) const;
};

// Standard deviation over every entry of the token-embedding table.
double embedding_std(const Weights& w);

enum class RestoreKind : std::uint8_t {
  Residual,  // stream entering layer l
  MlpWindow,  // MLP outputs of layers l..l+window-1
  AttnWindow,  // every head's output in layers l..l+window-1
};

std::string_view restore_kind_name(RestoreKind kind);
RestoreKind parse_restore_kind(std::string_view name);

struct RestoreSpec {
  RestoreKind kind = RestoreKind::Residual;
  int window = 3;  // window kinds; windows are cut at the top layer

  void validate() const;
};

// Final-position softmax probability of `target`.
double run_clean(const Weights& w, std::span<const TokenId> tokens, TokenId target);
double run_corrupted(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                     TokenId target);

// Corrupted run with the clean values restored at `positions` for layer (or
// window start) `layer`.
double run_restored(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                    const RestoreSpec& restore, std::span<const int> positions, int layer, TokenId target);

struct TraceGrid {
  Mat values;  // seq x n_layers, restored probability of the target
  double p_clean = 0.0;
  double p_corr = 0.0;
  TokenId target = 0;
  RestoreSpec restore;
};

TraceGrid trace(const Weights& w, std::span<const TokenId> tokens, const CorruptionSpec& corruption,
                const RestoreSpec& restore, TokenId target);

enum class SpanKind : std::uint8_t { Subject, Relation, Object };

std::string_view span_kind_name(SpanKind kind);

struct TraceOptions {
  std::optional<double> sigma;
  int window = 3;
  std::uint64_t seed = 0;
};

struct TracedPrompt {
  SpanKind span = SpanKind::Subject;
  int year = 0;
  std::vector<std::string> words;
  std::vector<int> span_positions;  // the span's own tokens
  std::vector<int> corrupted;       // span plus the time condition
  TraceGrid grid;
};

// For each year and each of subject, relation and object: noise on that span
// together with the year token, traced with every restore kind. Object
// tracing appends the placeholder object token and reads the prediction
// there.
std::vector<TracedPrompt> trace_suite(const Weights& w, const FactBase& fb, const Tokenizer& tok,
                                      const TemporalFact& fact, std::span<const int> years, const PromptTemplate& tmpl,
                                      const TraceOptions& opts = {});

// Header "position,token,0,1,..." (one column per layer), one row per position.
void write_grid_csv(std::ostream& out, const TraceGrid& grid, std::span<const std::string> words);

}  // namespace tempcircuit
