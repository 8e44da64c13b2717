#include "tempcircuit/dataset.hpp"

#include "tempcircuit/rng.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tempcircuit {

namespace {

constexpr std::string_view kYearSlot = "{YEAR}";
constexpr std::string_view kAliasSlot = "{ALIAS}";
constexpr std::string_view kSubjSlot = "{SUBJ}";
constexpr std::string_view kRelSlot = "{REL}";

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

bool is_slot(std::string_view w) { return w.size() > 2 && w.front() == '{' && w.back() == '}'; }

struct TemporalCategory {
  std::string_view name;
  std::string_view relation;
  std::string_view object_prefix;
};

constexpr std::array<TemporalCategory, 4> kTemporalCategories{{
    {"sports", "rel_team", "team_"},
    {"presidents", "rel_president", "pres_"},
    {"ceo", "rel_ceo", "ceo_"},
    {"defense", "rel_minister", "minister_"},
}};
constexpr int kObjectsPerTemporalCategory = 6;

struct InvariantSpec {
  InvariantCategory category;
  std::string_view relation;
  std::string_view subject_prefix;
};

constexpr std::array<InvariantSpec, 4> kInvariantCategories{{
    {InvariantCategory::Commonsense, "rel_superclass", "thing_"},
    {InvariantCategory::Conditional, "rel_inside_color", "fruit_"},
    {InvariantCategory::NumInObject, "rel_sides", "shape_"},
    {InvariantCategory::NumInSubject, "rel_value", "roman_"},
}};

constexpr std::array<std::string_view, 24> kAliasWords{
    "sydney", "athens", "beijing", "london", "rio",   "tokyo", "paris",  "berlin",
    "rome",   "madrid", "oslo",    "seoul",  "cairo", "lima",  "dublin", "vienna",
    "prague", "quito",  "delhi",   "nairobi", "lagos", "hanoi", "bogota", "manila"};

std::string roman(int n) {
  static const std::array<std::pair<int, std::string_view>, 9> table{
      {{40, "XL"}, {10, "X"}, {9, "IX"}, {5, "V"}, {4, "IV"}, {1, "I"}, {0, ""}, {0, ""}, {0, ""}}};
  std::string out;
  for (const auto& [value, numeral] : table) {
    if (value == 0) break;
    while (n >= value) {
      out += numeral;
      n -= value;
    }
  }
  return out;
}

// Object pool and subject naming for one invariant category; `draw` is a
// distinct number per fact within the category.
InvariantFact make_invariant(const InvariantSpec& spec, int index, int draw) {
  InvariantFact f;
  f.category = spec.category;
  f.relation = std::string(spec.relation);
  switch (spec.category) {
    case InvariantCategory::Commonsense:
      f.subject = "thing_" + std::to_string(index);
      f.object = "class_" + std::to_string(draw);
      break;
    case InvariantCategory::Conditional:
      f.subject = "fruit_" + std::to_string(index);
      f.object = "color_" + std::to_string(draw);
      break;
    case InvariantCategory::NumInObject:
      // A shape with `draw + 3` sides; the number lives in the object.
      f.subject = "shape_" + std::to_string(index);
      f.object = "n" + std::to_string(draw + 3);
      break;
    case InvariantCategory::NumInSubject:
      // The number lives in the subject: roman_XIV -> v14.
      f.subject = "roman_" + roman(draw + 1);
      f.object = "v" + std::to_string(draw + 1);
      break;
  }
  return f;
}

}  // namespace

std::string_view style_name(TemplateStyle style) {
  switch (style) {
    case TemplateStyle::Fundamental:
      return "fundamental";
    case TemplateStyle::YearWord:
      return "year-word";
    case TemplateStyle::Question:
      return "question";
    case TemplateStyle::Alias:
      return "alias";
    case TemplateStyle::NoTime:
      return "no-time";
  }
  return "?";
}

TemplateStyle parse_style(std::string_view name) {
  for (auto s : {TemplateStyle::Fundamental, TemplateStyle::YearWord, TemplateStyle::Question, TemplateStyle::Alias,
                 TemplateStyle::NoTime}) {
    if (style_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown template style: " + std::string(name));
}

void PromptTemplate::validate() const {
  int years = 0, aliases = 0, subjects = 0, relations = 0;
  for (const auto& w : split_words(pattern)) {
    if (w == kYearSlot) ++years;
    else if (w == kAliasSlot) ++aliases;
    else if (w == kSubjSlot) ++subjects;
    else if (w == kRelSlot) ++relations;
    else if (is_slot(w)) throw std::invalid_argument("template " + id + ": unknown slot " + w);
  }
  if (subjects != 1 || relations != 1) throw std::invalid_argument("template " + id + ": needs one {SUBJ} and one {REL}");
  const bool ok = style == TemplateStyle::NoTime  ? years + aliases == 0
                  : style == TemplateStyle::Alias ? aliases == 1 && years == 0
                                                  : years == 1 && aliases == 0;
  if (!ok) throw std::invalid_argument("template " + id + ": time slots do not match style " + std::string(style_name(style)));
}

std::vector<PromptTemplate> default_templates() {
  return {
      {"fundamental", "In {YEAR} {SUBJ} {REL}", TemplateStyle::Fundamental},
      {"year_word", "In year {YEAR} {SUBJ} {REL}", TemplateStyle::YearWord},
      {"question", "{SUBJ} {REL} in {YEAR} ?", TemplateStyle::Question},
      {"alias", "In {ALIAS} {SUBJ} {REL}", TemplateStyle::Alias},
      {"no_time", "{SUBJ} {REL}", TemplateStyle::NoTime},
  };
}

const std::string& TemporalFact::object_at(int year) const {
  const auto it = timeline.find(year);
  if (it == timeline.end()) throw std::out_of_range("year " + std::to_string(year) + " outside timeline of " + subject);
  return it->second;
}

std::vector<std::string> TemporalFact::distinct_objects() const {
  std::vector<std::string> out;
  for (const auto& [year, obj] : timeline) {
    if (std::find(out.begin(), out.end(), obj) == out.end()) out.push_back(obj);
  }
  return out;
}

std::string_view category_name(InvariantCategory c) {
  switch (c) {
    case InvariantCategory::Commonsense:
      return "commonsense";
    case InvariantCategory::Conditional:
      return "conditional";
    case InvariantCategory::NumInObject:
      return "num-in-object";
    case InvariantCategory::NumInSubject:
      return "num-in-subject";
  }
  return "?";
}

InvariantCategory parse_invariant_category(std::string_view name) {
  for (const auto& spec : kInvariantCategories) {
    if (category_name(spec.category) == name) return spec.category;
  }
  throw std::invalid_argument("unknown invariant category: " + std::string(name));
}

const std::string& FactBase::alias_for_year(int year) const {
  for (const auto& [alias, y] : aliases) {
    if (y == year) return alias;
  }
  throw std::out_of_range("no alias for year " + std::to_string(year));
}

int FactBase::year_for_alias(std::string_view alias) const {
  const auto it = aliases.find(std::string(alias));
  if (it == aliases.end()) throw std::out_of_range("unknown alias " + std::string(alias));
  return it->second;
}

const PromptTemplate& FactBase::find_template(std::string_view id) const {
  for (const auto& t : templates) {
    if (t.id == id) return t;
  }
  throw std::out_of_range("unknown template " + std::string(id));
}

const PromptTemplate& FactBase::template_for(TemplateStyle style) const {
  for (const auto& t : templates) {
    if (t.style == style) return t;
  }
  throw std::out_of_range("no template with style " + std::string(style_name(style)));
}

std::vector<int> FactBase::years() const {
  std::vector<int> ys;
  for (int y = year_min; y <= year_max; ++y) ys.push_back(y);
  return ys;
}

std::vector<std::string> FactBase::invariant_candidates(const InvariantFact& fact) const {
  std::vector<std::string> out;
  for (const auto& f : invariant) {
    if (f.relation == fact.relation && std::find(out.begin(), out.end(), f.object) == out.end()) out.push_back(f.object);
  }
  return out;
}

FactBase generate_factbase(const FactBaseParams& p) {
  if (p.year_max - p.year_min + 1 < 3) throw std::invalid_argument("generate_factbase: year range needs >= 3 years");
  if (p.n_temporal < 1 || p.n_invariant < 1) throw std::invalid_argument("generate_factbase: counts must be >= 1");

  FactBase fb;
  fb.seed = p.seed;
  fb.year_min = p.year_min;
  fb.year_max = p.year_max;
  fb.templates = default_templates();
  SplitMix64 rng(derive_seed(p.seed, 1));

  const int n_years = p.year_max - p.year_min + 1;
  for (int i = 0; i < p.n_temporal; ++i) {
    const auto& cat = kTemporalCategories[i % kTemporalCategories.size()];
    TemporalFact f;
    f.subject = "S" + std::to_string(i);
    f.relation = std::string(cat.relation);
    f.category = std::string(cat.name);

    // 2 or 3 segments; change points are distinct years after the first.
    const int segments = 2 + static_cast<int>(rng.below(std::min(2, n_years - 1)));
    std::vector<int> candidates;
    for (int y = p.year_min + 1; y <= p.year_max; ++y) candidates.push_back(y);
    rng.shuffle(candidates);
    std::vector<int> changes(candidates.begin(), candidates.begin() + (segments - 1));
    std::sort(changes.begin(), changes.end());

    int object = static_cast<int>(rng.below(kObjectsPerTemporalCategory));
    std::size_t next_change = 0;
    for (int y = p.year_min; y <= p.year_max; ++y) {
      if (next_change < changes.size() && y == changes[next_change]) {
        const int shift = 1 + static_cast<int>(rng.below(kObjectsPerTemporalCategory - 1));
        object = (object + shift) % kObjectsPerTemporalCategory;
        ++next_change;
      }
      f.timeline[y] = std::string(cat.object_prefix) + std::to_string(object);
    }
    fb.temporal.push_back(std::move(f));
  }

  // Per category, numbers are drawn without replacement so objects within a
  // relation stay distinct while the pool lasts.
  std::array<std::vector<int>, kInvariantCategories.size()> pools;
  for (auto& pool : pools) {
    for (int k = 0; k < 20; ++k) pool.push_back(k);
    rng.shuffle(pool);
  }
  std::array<int, kInvariantCategories.size()> used{};
  for (int i = 0; i < p.n_invariant; ++i) {
    const std::size_t c = static_cast<std::size_t>(i) % kInvariantCategories.size();
    const int draw = pools[c][used[c] % pools[c].size()];
    fb.invariant.push_back(make_invariant(kInvariantCategories[c], used[c], draw));
    ++used[c];
  }

  std::vector<std::string> alias_words;
  for (auto w : kAliasWords) alias_words.emplace_back(w);
  for (int k = static_cast<int>(alias_words.size()); k < n_years; ++k) alias_words.push_back("place" + std::to_string(k));
  rng.shuffle(alias_words);
  for (int k = 0; k < n_years; ++k) fb.aliases["games_" + alias_words[k]] = p.year_min + k;

  if (p.max_vocab > 0) {
    const int needed = build_tokenizer(fb).size();
    if (needed > p.max_vocab) {
      throw std::length_error("generate_factbase: needs " + std::to_string(needed) + " tokens, vocab limit is " +
                              std::to_string(p.max_vocab));
    }
  }
  return fb;
}

nlohmann::json factbase_to_json(const FactBase& fb) {
  nlohmann::json j;
  j["seed"] = fb.seed;
  j["year_range"] = {fb.year_min, fb.year_max};
  j["temporal"] = nlohmann::json::array();
  for (const auto& f : fb.temporal) {
    nlohmann::json timeline = nlohmann::json::object();
    for (const auto& [year, obj] : f.timeline) timeline[std::to_string(year)] = obj;
    j["temporal"].push_back({{"subject", f.subject}, {"relation", f.relation}, {"category", f.category}, {"timeline", timeline}});
  }
  j["invariant"] = nlohmann::json::array();
  for (const auto& f : fb.invariant) {
    j["invariant"].push_back({{"subject", f.subject},
                              {"relation", f.relation},
                              {"object", f.object},
                              {"category", std::string(category_name(f.category))}});
  }
  j["aliases"] = nlohmann::json::object();
  for (const auto& [alias, year] : fb.aliases) j["aliases"][alias] = year;
  j["templates"] = nlohmann::json::array();
  for (const auto& t : fb.templates) {
    j["templates"].push_back({{"id", t.id}, {"pattern", t.pattern}, {"style", std::string(style_name(t.style))}});
  }
  return j;
}

FactBase factbase_from_json(const nlohmann::json& j) {
  try {
    FactBase fb;
    fb.seed = j.value("seed", std::uint64_t{0});
    fb.year_min = j.at("year_range").at(0).get<int>();
    fb.year_max = j.at("year_range").at(1).get<int>();
    for (const auto& jf : j.at("temporal")) {
      TemporalFact f;
      f.subject = jf.at("subject").get<std::string>();
      f.relation = jf.at("relation").get<std::string>();
      f.category = jf.at("category").get<std::string>();
      for (const auto& [year, obj] : jf.at("timeline").items()) f.timeline[std::stoi(year)] = obj.get<std::string>();
      if (f.distinct_objects().size() < 2) throw ParseError("temporal fact " + f.subject + " has a single object");
      fb.temporal.push_back(std::move(f));
    }
    for (const auto& jf : j.at("invariant")) {
      InvariantFact f;
      f.subject = jf.at("subject").get<std::string>();
      f.relation = jf.at("relation").get<std::string>();
      f.object = jf.at("object").get<std::string>();
      f.category = parse_invariant_category(jf.at("category").get<std::string>());
      fb.invariant.push_back(std::move(f));
    }
    std::set<int> alias_years;
    for (const auto& [alias, year] : j.at("aliases").items()) {
      fb.aliases[alias] = year.get<int>();
      if (!alias_years.insert(year.get<int>()).second) throw ParseError("alias table is not bijective");
    }
    for (const auto& jt : j.at("templates")) {
      PromptTemplate t{jt.at("id").get<std::string>(), jt.at("pattern").get<std::string>(),
                       parse_style(jt.at("style").get<std::string>())};
      t.validate();
      fb.templates.push_back(std::move(t));
    }
    return fb;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("factbase: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("factbase: ") + e.what());
  }
}

Tokenizer::Tokenizer(std::vector<std::string> words) {
  std::set<std::string> unique(words.begin(), words.end());
  unique.erase("<pad>");
  unique.erase("<bos>");
  words_ = {"<pad>", "<bos>"};
  words_.insert(words_.end(), unique.begin(), unique.end());
  for (std::size_t i = 0; i < words_.size(); ++i) ids_.emplace(words_[i], static_cast<TokenId>(i));
}

TokenId Tokenizer::id(std::string_view word) const {
  const auto it = ids_.find(std::string(word));
  if (it == ids_.end()) throw std::out_of_range("word not in vocabulary: " + std::string(word));
  return it->second;
}

const std::string& Tokenizer::word(TokenId id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id outside vocabulary");
  return words_[id];
}

std::vector<TokenId> Tokenizer::encode(std::span<const std::string> words) const {
  std::vector<TokenId> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Tokenizer::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId t : ids) words.push_back(word(t));
  return words;
}

std::string Tokenizer::decode_text(std::span<const TokenId> ids) const {
  std::string text;
  for (TokenId t : ids) {
    if (!text.empty()) text += ' ';
    text += word(t);
  }
  return text;
}

Tokenizer build_tokenizer(const FactBase& fb) {
  std::vector<std::string> words;
  for (const auto& t : fb.templates) {
    for (auto& w : split_words(t.pattern)) {
      if (!is_slot(w)) words.push_back(std::move(w));
    }
  }
  for (int y = fb.year_min; y <= fb.year_max; ++y) words.push_back(std::to_string(y));
  for (const auto& [alias, year] : fb.aliases) words.push_back(alias);
  for (const auto& f : fb.temporal) {
    words.push_back(f.subject);
    words.push_back(f.relation);
    for (const auto& [year, obj] : f.timeline) words.push_back(obj);
  }
  for (const auto& f : fb.invariant) {
    words.push_back(f.subject);
    words.push_back(f.relation);
    words.push_back(f.object);
  }
  words.emplace_back(Tokenizer::kPlaceholderObject);
  return Tokenizer(std::move(words));
}

std::vector<int> RenderedPrompt::time_span() const {
  std::vector<int> span;
  if (time_pos < 0) return span;
  for (int p = time_begin; p <= time_pos; ++p) span.push_back(p);
  return span;
}

namespace {

RenderedPrompt render_words(const FactBase& fb, const Tokenizer& tok, const std::string& subject,
                            const std::string& relation, const PromptTemplate& tmpl, const TimeSpec& time) {
  tmpl.validate();
  RenderedPrompt out;
  std::string time_word;
  switch (tmpl.style) {
    case TemplateStyle::NoTime:
      if (time.kind != TimeSpec::Kind::None) throw std::invalid_argument("no-time template given a time");
      break;
    case TemplateStyle::Alias:
      if (time.kind == TimeSpec::Kind::Alias) {
        out.year = fb.year_for_alias(time.alias);
        time_word = time.alias;
      } else if (time.kind == TimeSpec::Kind::Year) {
        out.year = time.year;
        time_word = fb.alias_for_year(time.year);
      } else {
        throw std::invalid_argument("alias template needs a time");
      }
      break;
    default:
      if (time.kind == TimeSpec::Kind::Year) {
        out.year = time.year;
      } else if (time.kind == TimeSpec::Kind::Alias) {
        out.year = fb.year_for_alias(time.alias);
      } else {
        throw std::invalid_argument("template " + tmpl.id + " needs a time");
      }
      time_word = std::to_string(out.year);
      break;
  }
  if (tmpl.style != TemplateStyle::NoTime && (out.year < fb.year_min || out.year > fb.year_max)) {
    throw std::out_of_range("year " + std::to_string(out.year) + " outside the fact base range");
  }

  const auto pattern = split_words(tmpl.pattern);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    const auto& w = pattern[i];
    const int pos = static_cast<int>(i);
    if (w == kYearSlot || w == kAliasSlot) {
      out.words.push_back(time_word);
      out.time_pos = pos;
      // The time condition includes the literal words just before the slot ("In", "In year").
      out.time_begin = pos;
      while (out.time_begin > 0 && !is_slot(pattern[out.time_begin - 1])) --out.time_begin;
    } else if (w == kSubjSlot) {
      out.words.push_back(subject);
      out.subject_pos = pos;
    } else if (w == kRelSlot) {
      out.words.push_back(relation);
      out.relation_pos = pos;
    } else {
      out.words.push_back(w);
    }
  }
  out.tokens = tok.encode(out.words);
  return out;
}

}  // namespace

RenderedPrompt render_prompt(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact,
                             const PromptTemplate& tmpl, const TimeSpec& time) {
  RenderedPrompt out = render_words(fb, tok, fact.subject, fact.relation, tmpl, time);
  // No-time prompts answer with the most recent object.
  out.answer_word = tmpl.style == TemplateStyle::NoTime ? fact.latest_object() : fact.object_at(out.year);
  out.answer = tok.id(out.answer_word);
  return out;
}

RenderedPrompt render_prompt(const FactBase& fb, const Tokenizer& tok, const InvariantFact& fact,
                             const PromptTemplate& tmpl, const TimeSpec& time) {
  RenderedPrompt out = render_words(fb, tok, fact.subject, fact.relation, tmpl, time);
  out.answer_word = fact.object;
  out.answer = tok.id(out.answer_word);
  return out;
}

PromptPair make_contrast_pair(const FactBase& fb, const Tokenizer& tok, const TemporalFact& fact, int t_clean,
                              int t_corrupt, const PromptTemplate& tmpl) {
  if (!tmpl.has_time_slot()) throw std::invalid_argument("contrast pair needs a time-bearing template");
  if (fact.object_at(t_clean) == fact.object_at(t_corrupt)) {
    throw std::invalid_argument("contrast pair: " + fact.subject + " has the same object in " + std::to_string(t_clean) +
                                " and " + std::to_string(t_corrupt));
  }
  return {render_prompt(fb, tok, fact, tmpl, TimeSpec::at_year(t_clean)),
          render_prompt(fb, tok, fact, tmpl, TimeSpec::at_year(t_corrupt))};
}

PromptPair make_subject_contrast_pair(const FactBase& fb, const Tokenizer& tok, const InvariantFact& clean,
                                      const InvariantFact& corrupted, int year, const PromptTemplate& tmpl) {
  if (clean.relation != corrupted.relation) throw std::invalid_argument("subject contrast needs a shared relation");
  if (clean.object == corrupted.object) {
    throw std::invalid_argument("subject contrast: " + clean.subject + " and " + corrupted.subject + " share an object");
  }
  const TimeSpec time = tmpl.has_time_slot() ? TimeSpec::at_year(year) : TimeSpec::none();
  return {render_prompt(fb, tok, clean, tmpl, time), render_prompt(fb, tok, corrupted, tmpl, time)};
}

std::vector<LabeledPrompt> enumerate_prompts(const FactBase& fb, const Tokenizer& tok) {
  std::vector<LabeledPrompt> out;
  auto add = [&](const RenderedPrompt& r, FactKind kind, TemplateStyle style, int index) {
    out.push_back({r.tokens, r.answer, kind, style, index, r.year});
  };
  for (const auto& tmpl : fb.templates) {
    for (std::size_t i = 0; i < fb.temporal.size(); ++i) {
      const auto& f = fb.temporal[i];
      if (!tmpl.has_time_slot()) {
        add(render_prompt(fb, tok, f, tmpl, TimeSpec::none()), FactKind::Temporal, tmpl.style, static_cast<int>(i));
        continue;
      }
      for (int y = fb.year_min; y <= fb.year_max; ++y) {
        add(render_prompt(fb, tok, f, tmpl, TimeSpec::at_year(y)), FactKind::Temporal, tmpl.style, static_cast<int>(i));
      }
    }
    for (std::size_t i = 0; i < fb.invariant.size(); ++i) {
      const auto& f = fb.invariant[i];
      if (!tmpl.has_time_slot()) {
        add(render_prompt(fb, tok, f, tmpl, TimeSpec::none()), FactKind::Invariant, tmpl.style, static_cast<int>(i));
        continue;
      }
      for (int y = fb.year_min; y <= fb.year_max; ++y) {
        add(render_prompt(fb, tok, f, tmpl, TimeSpec::at_year(y)), FactKind::Invariant, tmpl.style, static_cast<int>(i));
      }
    }
  }
  return out;
}

}  // namespace tempcircuit
