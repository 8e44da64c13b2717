#pragma once

#include "tempcircuit/types.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tempcircuit {

enum class TemplateStyle : std::uint8_t { Fundamental, YearWord, Question, Alias, NoTime };

std::string_view style_name(TemplateStyle style);
TemplateStyle parse_style(std::string_view name);

// Whitespace-separated words; slots are {YEAR}, {ALIAS}, {SUBJ}, {REL}.
struct PromptTemplate {
  std::string id;
  std::string pattern;
  TemplateStyle style = TemplateStyle::Fundamental;

  // Checks the slot layout against the style.
  void validate() const;
  bool has_time_slot() const { return style != TemplateStyle::NoTime; }
};

std::vector<PromptTemplate> default_templates();

struct TemporalFact {
  std::string subject;
  std::string relation;
  std::string category;
  std::map<int, std::string> timeline;  // year -> object

  const std::string& object_at(int year) const;
  const std::string& latest_object() const { return timeline.rbegin()->second; }
  std::vector<std::string> distinct_objects() const;
};

enum class InvariantCategory : std::uint8_t { Commonsense, Conditional, NumInObject, NumInSubject };

std::string_view category_name(InvariantCategory c);
InvariantCategory parse_invariant_category(std::string_view name);

struct InvariantFact {
  std::string subject;
  std::string relation;
  std::string object;
  InvariantCategory category = InvariantCategory::Commonsense;
};

struct FactBase {
  std::uint64_t seed = 0;
  int year_min = 1999;
  int year_max = 2009;
  std::vector<TemporalFact> temporal;
  std::vector<InvariantFact> invariant;
  std::map<std::string, int> aliases;  // alias token -> year, bijective
  std::vector<PromptTemplate> templates;

  const std::string& alias_for_year(int year) const;
  int year_for_alias(std::string_view alias) const;
  const PromptTemplate& find_template(std::string_view id) const;
  const PromptTemplate& template_for(TemplateStyle style) const;
  std::vector<int> years() const;
  // Objects of other invariant facts sharing `fact`'s relation, plus its own.
  std::vector<std::string> invariant_candidates(const InvariantFact& fact) const;
};

struct FactBaseParams {
  std::uint64_t seed = 7;
  int n_temporal = 32;
  int n_invariant = 16;
  int year_min = 1999;
  int year_max = 2009;
  int max_vocab = 0;  // 0 = no limit
};

FactBase generate_factbase(const FactBaseParams& params);

nlohmann::json factbase_to_json(const FactBase& fb);
FactBase factbase_from_json(const nlohmann::json& j);

// Word-level vocabulary. Ids 0 and 1 are reserved; the rest follow sorted order.
class Tokenizer {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr std::string_view kPlaceholderObject = "[obj]";

  Tokenizer() = default;
  explicit Tokenizer(std::vector<std::string> words);

  TokenId id(std::string_view word) const;
  bool contains(std::string_view word) const { return ids_.contains(std::string(word)); }
  const std::string& word(TokenId id) const;
  std::vector<TokenId> encode(std::span<const std::string> words) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;
  std::string decode_text(std::span<const TokenId> ids) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

  bool operator==(const Tokenizer& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> ids_;
};

Tokenizer build_tokenizer(const FactBase& fb);

struct TimeSpec {
  enum class Kind : std::uint8_t { Year, Alias, None };
  Kind kind = Kind::None;
  int year = 0;
  std::string alias;

  static TimeSpec at_year(int y) { return {Kind::Year, y, {}}; }
  static TimeSpec by_alias(std::string a) { return {Kind::Alias, 0, std::move(a)}; }
  static TimeSpec none() { return {}; }
};

struct RenderedPrompt {
  std::vector<std::string> words;
  std::vector<TokenId> tokens;
  TokenId answer = 0;
  std::string answer_word;
  int year = 0;        // resolved year, 0 for no-time prompts
  int time_begin = -1;  // first word of the time condition ("In" of "In 2004")
  int time_pos = -1;    // the year/alias token, last token of the time condition
  int subject_pos = -1;
  int relation_pos = -1;

  // Positions time_begin..time_pos; empty for no-time prompts.
  std::vector<int> time_span() const;
};

RenderedPrompt render_prompt(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact,
                             const PromptTemplate& tmpl, const TimeSpec& time);
RenderedPrompt render_prompt(const FactBase& fb, const Tokenizer& tok, const InvariantFact& fact,
                             const PromptTemplate& tmpl, const TimeSpec& time);

struct PromptPair {
  RenderedPrompt clean;
  RenderedPrompt corrupted;
};

// Same fact and template at two years whose objects differ. Throws
// std::invalid_argument when the objects are equal.
PromptPair make_contrast_pair(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact, int t_clean,
                              int t_corrupt, const PromptTemplate& tmpl);

// Two invariant facts sharing a relation, rendered at the same year; only
// the subject token differs. Throws when the objects are equal.
PromptPair make_subject_contrast_pair(const FactBase& fb, const Tokenizer& tok, const InvariantFact& clean,
                                      const InvariantFact& corrupted, int year, const PromptTemplate& tmpl);

enum class FactKind : std::uint8_t { Temporal, Invariant };

struct LabeledPrompt {
  std::vector<TokenId> tokens;
  TokenId answer = 0;
  FactKind kind = FactKind::Temporal;
  TemplateStyle style = TemplateStyle::Fundamental;
  int fact_index = 0;
  int year = 0;
};

// Every (fact, year, template) rendering: the memorization target set.
std::vector<LabeledPrompt> enumerate_prompts(const FactBase& fb, const Tokenizer& tok);

}  // namespace tempcircuit
