#pragma once

// Synthetic multi-domain corpus and the constant-renaming ablation.
//
// Every domain grammar instantiates the same four templates over its own
// lexicon, so utterance and logical-form skeletons repeat across domains:
//
//   join               Type.T ⊓ P . E
//   comparative        Type.T ⊓ P .op. N
//   superlative        argmax ( Type.T , P )   (argmin, and count degrees)
//   count-comparative  Type.T ⊓ R ( λx. count ( R ( C ) . x ) ) .op. N

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mkbparse/dataset.hpp"
#include "mkbparse/error.hpp"
#include "mkbparse/executor.hpp"
#include "mkbparse/kb.hpp"
#include "mkbparse/logical_form.hpp"
#include "mkbparse/random.hpp"

namespace mkb {

struct EntityValue {
  std::string phrase;    // surface words
  std::string constant;  // KB entity
};

struct EntityProperty {
  std::string name;                   // KB property
  std::string noun;                   // "neighborhood"
  std::vector<std::string> relation;  // "in", "located in"
  std::vector<EntityValue> values;
};

struct NumericProperty {
  std::string name;
  std::string noun;
  std::vector<double> thresholds;  // numbers that appear in utterances
  double low = 0, high = 0, step = 1;  // KB values are low + i*step <= high
};

struct CountProperty {
  std::string name;             // multi-valued KB property
  std::string noun;             // plural, "amenities"
  std::vector<std::string> values;
  std::vector<double> thresholds;
  int max_per_entity = 4;
};

struct DomainGrammar {
  std::string name;
  std::string type;  // KB type of the main entities
  std::vector<std::string> plural;
  std::vector<std::string> singular;
  std::string entity_prefix;
  int entity_count = 10;
  std::vector<NumericProperty> numeric;
  std::vector<EntityProperty> entity;
  CountProperty count;
};

enum class Template { Join, Comparative, Superlative, CountComparative };

inline constexpr std::array kAllTemplates = {Template::Join, Template::Comparative, Template::Superlative,
                                             Template::CountComparative};

inline std::string_view to_string(Template t) {
  switch (t) {
    case Template::Join: return "join";
    case Template::Comparative: return "comparative";
    case Template::Superlative: return "superlative";
    case Template::CountComparative: return "count-comparative";
  }
  return "?";
}

/// One instantiated template. The structured fields let callers recompute
/// the denotation without going through the logical form.
struct TemplateInstance {
  Template kind = Template::Join;
  std::vector<std::string> utterance;
  lf::LogicalForm form;
  std::string type;
  std::string property;  // numeric, entity or count property
  std::string value;     // join value entity
  lf::CompareOp op = lf::CompareOp::Eq;
  double threshold = 0.0;
  bool maximize = true;
  bool count_degree = false;
};

// ---------------------------------------------------------------------------
// Built-in grammars

inline std::vector<DomainGrammar> builtin_grammars() {
  std::vector<DomainGrammar> out;
  const std::vector<EntityValue> neighborhoods{{"midtown", "Midtown"},
                                               {"chinatown", "Chinatown"},
                                               {"soho", "Soho"},
                                               {"harlem", "Harlem"},
                                               {"the village", "Village"}};
  const std::vector<EntityValue> cuisines{{"thai", "Thai"},
                                          {"italian", "Italian"},
                                          {"mexican", "Mexican"},
                                          {"indian", "Indian"},
                                          {"french", "French"}};
  {
    DomainGrammar g;
    g.name = "housing";
    g.type = "HousingUnit";
    g.plural = {"housing units", "apartments", "homes"};
    g.singular = {"housing unit", "apartment", "home"};
    g.entity_prefix = "Unit";
    g.numeric = {{"Size", "size", {600, 700, 800, 900, 1000, 1100}, 550, 1150, 50},
                 {"Price", "price", {1500, 2000, 2500, 3000}, 1250, 3250, 250},
                 {"Floor", "floor", {2, 3, 4, 5, 6, 7}, 1, 8, 1}};
    g.entity = {{"Neighborhood", "neighborhood", {"in", "located in"}, neighborhoods},
                {"Landlord", "landlord", {"managed by", "rented by"},
                 {{"acme realty", "AcmeRealty"}, {"city homes", "CityHomes"}, {"urban living", "UrbanLiving"}}}};
    g.count = {"Amenity", "amenities", {"Pool", "Gym", "Parking", "Laundry", "Balcony"}, {1, 2, 3}, 4};
    out.push_back(std::move(g));
  }
  {
    DomainGrammar g;
    g.name = "restaurants";
    g.type = "Restaurant";
    g.plural = {"restaurants", "eateries", "diners"};
    g.singular = {"restaurant", "eatery", "diner"};
    g.entity_prefix = "Resto";
    g.numeric = {{"Price", "price", {20, 30, 40, 50}, 15, 55, 5},
                 {"Rating", "rating", {2, 3, 4}, 1, 5, 0.5},
                 {"Capacity", "capacity", {40, 60, 80, 100}, 30, 110, 10}};
    g.entity = {{"Neighborhood", "neighborhood", {"in", "located in"}, neighborhoods},
                {"Cuisine", "cuisine", {"serving", "that serve"}, cuisines}};
    g.count = {"Review", "reviews", {"ReviewA", "ReviewB", "ReviewC", "ReviewD", "ReviewE"}, {1, 2, 3}, 4};
    out.push_back(std::move(g));
  }
  {
    DomainGrammar g;
    g.name = "calendar";
    g.type = "Meeting";
    g.plural = {"meetings", "events", "appointments"};
    g.singular = {"meeting", "event", "appointment"};
    g.entity_prefix = "Mtg";
    g.numeric = {{"Duration", "duration", {30, 45, 60, 90}, 15, 120, 15},
                 {"StartTime", "start time", {9, 10, 11, 13, 14, 15}, 8, 17, 1},
                 {"Priority", "priority", {2, 3, 4}, 1, 5, 1}};
    g.entity = {{"Location", "location", {"in", "held in"},
                 {{"room a", "RoomA"}, {"room b", "RoomB"}, {"the lobby", "Lobby"}, {"the cafeteria", "Cafeteria"}}},
                {"Organizer", "organizer", {"organized by", "run by"},
                 {{"alice", "Alice"}, {"bob", "Bob"}, {"carol", "Carol"}, {"dave", "Dave"}}}};
    g.count = {"Attendee", "attendees", {"Erin", "Frank", "Grace", "Heidi", "Ivan"}, {1, 2, 3}, 4};
    out.push_back(std::move(g));
  }
  {
    DomainGrammar g;
    g.name = "publications";
    g.type = "Article";
    g.plural = {"articles", "papers", "publications"};
    g.singular = {"article", "paper", "publication"};
    g.entity_prefix = "Art";
    g.numeric = {{"Year", "year", {2005, 2010, 2015}, 2002, 2018, 2},
                 {"Pages", "pages", {8, 10, 12, 14}, 6, 16, 1},
                 {"Citations", "citations", {10, 50, 100}, 0, 150, 10}};
    g.entity = {{"Venue", "venue", {"published in", "appearing in"},
                 {{"acl", "Acl"}, {"emnlp", "Emnlp"}, {"naacl", "Naacl"}, {"coling", "Coling"}}},
                {"Publisher", "publisher", {"published by", "printed by"},
                 {{"springer", "Springer"}, {"elsevier", "Elsevier"}, {"the acm", "Acm"}}}};
    g.count = {"Author", "authors", {"Kim", "Lee", "Patel", "Chen", "Garcia"}, {1, 2, 3}, 4};
    out.push_back(std::move(g));
  }
  {
    DomainGrammar g;
    g.name = "recipes";
    g.type = "Recipe";
    g.plural = {"recipes", "dishes", "meals"};
    g.singular = {"recipe", "dish", "meal"};
    g.entity_prefix = "Rcp";
    g.numeric = {{"Calories", "calories", {300, 400, 500, 600}, 250, 650, 50},
                 {"PrepTime", "preparation time", {15, 30, 45}, 10, 60, 5},
                 {"Servings", "servings", {2, 4, 6}, 1, 8, 1}};
    g.entity = {{"Cuisine", "cuisine", {"from", "in the style of"}, cuisines},
                {"Course", "course", {"served as", "eaten as"},
                 {{"breakfast", "Breakfast"}, {"lunch", "Lunch"}, {"dinner", "Dinner"}, {"dessert", "Dessert"}}}};
    g.count = {"Ingredient", "ingredients", {"Salt", "Garlic", "Onion", "Butter", "Basil"}, {1, 2, 3}, 4};
    out.push_back(std::move(g));
  }
  return out;
}

inline const std::vector<std::string>& default_domains() {
  static const std::vector<std::string> names{"housing", "restaurants", "calendar"};
  return names;
}

inline DomainGrammar grammar_by_name(std::string_view name) {
  for (auto& g : builtin_grammars())
    if (g.name == name) return g;
  throw Error("no built-in grammar for domain '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Knowledge bases

inline std::vector<std::string> main_entities(const DomainGrammar& g) {
  std::vector<std::string> out;
  for (int i = 0; i < g.entity_count; ++i) out.push_back(g.entity_prefix + std::to_string(i + 1));
  return out;
}

/// Random KB over the grammar's schema: every main entity gets one value
/// per numeric and entity property and a random subset of count values.
inline Kb build_kb(const DomainGrammar& g, std::uint64_t seed) {
  Rng rng(seed);
  Kb kb;
  const auto mains = main_entities(g);
  for (const auto& e : mains) kb.add(e, std::string(kTypeProperty), g.type);
  for (const auto& p : g.entity) {
    for (const auto& v : p.values) kb.add(v.constant, std::string(kTypeProperty), p.name);
  }
  for (const auto& v : g.count.values) kb.add(v, std::string(kTypeProperty), g.count.name);
  for (const auto& e : mains) {
    for (const auto& p : g.numeric) {
      const auto levels = static_cast<std::uint64_t>(std::floor((p.high - p.low) / p.step + 1e-9)) + 1;
      kb.add(e, p.name, p.low + p.step * static_cast<double>(rng.below(levels)));
    }
    for (const auto& p : g.entity) kb.add(e, p.name, rng.pick(p.values).constant);
    std::vector<std::string> pool = g.count.values;
    rng.shuffle(pool);
    const auto n = rng.below(static_cast<std::uint64_t>(g.count.max_per_entity) + 1);
    for (std::uint64_t i = 0; i < n; ++i) kb.add(e, g.count.name, pool[i]);
  }
  return kb;
}

// ---------------------------------------------------------------------------
// Template instances

namespace detail {

inline void append_words(std::vector<std::string>& out, std::string_view text) {
  for (auto& w : split_tokens(text)) out.push_back(std::move(w));
}

inline std::vector<std::string> words(std::initializer_list<std::string_view> parts) {
  std::vector<std::string> out;
  for (auto p : parts) append_words(out, p);
  return out;
}

inline const std::vector<std::string>& requests() {
  static const std::vector<std::string> r{"", "show me", "find", "list"};
  return r;
}

inline std::vector<std::string> compare_phrases(lf::CompareOp op) {
  switch (op) {
    case lf::CompareOp::Le: return {"at most", "no more than"};
    case lf::CompareOp::Ge: return {"at least", "no less than"};
    case lf::CompareOp::Lt: return {"less than", "below"};
    case lf::CompareOp::Gt: return {"more than", "above"};
    case lf::CompareOp::Eq: return {"exactly"};
  }
  return {};
}

inline std::vector<std::string> superlative_phrases(bool maximize, bool count) {
  if (count) return maximize ? std::vector<std::string>{"the most", "the largest number of"}
                             : std::vector<std::string>{"the fewest", "the smallest number of"};
  return maximize ? std::vector<std::string>{"the highest", "the largest"}
                  : std::vector<std::string>{"the lowest", "the smallest"};
}

inline lf::LogicalForm type_filter(const DomainGrammar& g) { return lf::LogicalForm::type(g.type); }

inline lf::LogicalForm count_degree(const std::string& property) {
  using lf::LogicalForm;
  return LogicalForm::reverse(LogicalForm::lambda(LogicalForm::count(
      LogicalForm::join(LogicalForm::reverse(LogicalForm::property(property)), LogicalForm::variable()))));
}

inline constexpr std::array kComparisons = {lf::CompareOp::Le, lf::CompareOp::Ge, lf::CompareOp::Lt,
                                            lf::CompareOp::Gt};

}  // namespace detail

/// Every instantiation of every template, in a fixed order, before any
/// denotation filtering.
inline std::vector<TemplateInstance> enumerate_instances(const DomainGrammar& g) {
  using detail::words;
  using lf::LogicalForm;
  std::vector<TemplateInstance> out;
  auto emit = [&](TemplateInstance base, std::vector<std::string> utterance) {
    base.utterance = std::move(utterance);
    out.push_back(base);
  };
  // Noun-phrase patterns take an optional request prefix; question
  // patterns do not.
  auto noun_phrases = [&](const TemplateInstance& base, const std::vector<std::string>& tails,
                          const std::vector<std::string>& plural_tails, const std::vector<std::string>& questions,
                          const std::vector<std::string>& types) {
    for (const auto& type : types) {
      for (const auto& req : detail::requests()) {
        for (const auto& tail : tails) emit(base, words({req, type, tail}));
      }
      for (const auto& tail : plural_tails) emit(base, words({type, tail}));
      for (const auto& q : questions) emit(base, words({"which", type, q}));
    }
  };

  for (const auto& p : g.entity) {
    for (const auto& v : p.values) {
      TemplateInstance t;
      t.kind = Template::Join;
      t.type = g.type;
      t.property = p.name;
      t.value = v.constant;
      t.form = LogicalForm::intersect(detail::type_filter(g),
                                      LogicalForm::join(LogicalForm::property(p.name), LogicalForm::entity(v.constant)));
      std::vector<std::string> tails;
      for (const auto& rel : p.relation) tails.push_back(rel + " " + v.phrase);
      tails.push_back("whose " + p.noun + " is " + v.phrase);
      noun_phrases(t, tails, {}, {"are " + p.relation.front() + " " + v.phrase, "have " + p.noun + " " + v.phrase},
                   g.plural);
    }
  }
  for (const auto& p : g.numeric) {
    for (lf::CompareOp op : detail::kComparisons) {
      for (double n : p.thresholds) {
        TemplateInstance t;
        t.kind = Template::Comparative;
        t.type = g.type;
        t.property = p.name;
        t.op = op;
        t.threshold = n;
        t.form = LogicalForm::intersect(
            detail::type_filter(g),
            LogicalForm::join(LogicalForm::property(p.name), LogicalForm::compare(op, LogicalForm::num(n))));
        const std::string num = format_number(n);
        std::vector<std::string> tails, questions;
        for (const auto& phrase : detail::compare_phrases(op)) {
          tails.push_back("with " + p.noun + " " + phrase + " " + num);
          tails.push_back("whose " + p.noun + " is " + phrase + " " + num);
          questions.push_back("have a " + p.noun + " of " + phrase + " " + num);
        }
        noun_phrases(t, tails, {}, questions, g.plural);
      }
    }
  }
  for (lf::CompareOp op : detail::kComparisons) {
    for (double n : g.count.thresholds) {
      TemplateInstance t;
      t.kind = Template::CountComparative;
      t.type = g.type;
      t.property = g.count.name;
      t.op = op;
      t.threshold = n;
      t.count_degree = true;
      t.form = LogicalForm::intersect(
          detail::type_filter(g), LogicalForm::join(detail::count_degree(g.count.name),
                                                    LogicalForm::compare(op, LogicalForm::num(n))));
      const std::string num = format_number(n);
      std::vector<std::string> tails, questions;
      for (const auto& phrase : detail::compare_phrases(op)) {
        tails.push_back("with " + phrase + " " + num + " " + g.count.noun);
        tails.push_back("that have " + phrase + " " + num + " " + g.count.noun);
        questions.push_back("have " + phrase + " " + num + " " + g.count.noun);
      }
      noun_phrases(t, tails, {}, questions, g.plural);
    }
  }
  auto superlatives = [&](const std::string& property, const std::string& noun, bool count) {
    for (bool maximize : {true, false}) {
      TemplateInstance t;
      t.kind = Template::Superlative;
      t.type = g.type;
      t.property = property;
      t.maximize = maximize;
      t.count_degree = count;
      LogicalForm degree = count ? detail::count_degree(property) : LogicalForm::property(property);
      t.form = maximize ? LogicalForm::argmax(detail::type_filter(g), degree)
                        : LogicalForm::argmin(detail::type_filter(g), degree);
      std::vector<std::string> tails, questions;
      for (const auto& phrase : detail::superlative_phrases(maximize, count)) {
        tails.push_back("with " + phrase + " " + noun);
        questions.push_back("has " + phrase + " " + noun);
      }
      for (const auto& type : g.singular) {
        for (const auto& req : detail::requests()) {
          for (const auto& tail : tails) emit(t, words({req, "the", type, tail}));
        }
        for (const auto& q : questions) emit(t, words({"which", type, q}));
      }
    }
  };
  for (const auto& p : g.numeric) superlatives(p.name, p.noun, false);
  superlatives(g.count.name, g.count.noun, true);
  return out;
}

/// Instances whose denotation on `kb` is neither empty nor the whole type.
inline std::vector<TemplateInstance> usable_instances(const DomainGrammar& g, const Kb& kb) {
  std::vector<TemplateInstance> out;
  const std::size_t all = kb.entities_of_type(g.type).size();
  for (auto& t : enumerate_instances(g)) {
    Denotation d = execute(t.form, kb);
    if (d.size() == 0 || d.size() == all) continue;
    out.push_back(std::move(t));
  }
  return out;
}

struct GeneratedDomain {
  Kb kb;
  std::vector<TemplateInstance> instances;
};

/// Sampling weights per template, in kAllTemplates order.
inline constexpr std::array<double, 4> kTemplateWeights = {0.2, 0.35, 0.25, 0.2};

/// `n` distinct (utterance, logical form) pairs: a template is drawn by
/// weight among those with unused instances, then an unused instance of it
/// uniformly.
inline GeneratedDomain generate_domain(const DomainGrammar& g, std::size_t n, std::uint64_t seed,
                                       std::optional<Kb> kb = std::nullopt) {
  if (n == 0) throw Error("cannot generate an empty dataset for domain '" + g.name + "'");
  GeneratedDomain out;
  out.kb = kb ? std::move(*kb) : build_kb(g, derive_seed(seed, 1));
  std::array<std::vector<TemplateInstance>, 4> pools;
  for (auto& t : usable_instances(g, out.kb)) pools[static_cast<std::size_t>(t.kind)].push_back(std::move(t));
  std::size_t total = 0;
  for (const auto& p : pools) total += p.size();
  if (total < n) {
    throw Error("domain '" + g.name + "' yields only " + std::to_string(total) + " distinct pairs, " +
                std::to_string(n) + " requested");
  }
  Rng rng(derive_seed(seed, 2));
  while (out.instances.size() < n) {
    double mass = 0;
    for (std::size_t t = 0; t < pools.size(); ++t)
      if (!pools[t].empty()) mass += kTemplateWeights[t];
    double r = rng.uniform01() * mass;
    std::size_t pick = pools.size();
    for (std::size_t t = 0; t < pools.size(); ++t) {
      if (pools[t].empty()) continue;
      pick = t;
      if ((r -= kTemplateWeights[t]) < 0) break;
    }
    auto& pool = pools[pick];
    const std::size_t i = rng.below(pool.size());
    out.instances.push_back(std::move(pool[i]));
    pool[i] = std::move(pool.back());
    pool.pop_back();
  }
  return out;
}

inline Example to_example(const TemplateInstance& t, std::size_t domain) {
  return {domain, t.utterance, lf::print_tokens(t.form)};
}

struct GenerateConfig {
  std::vector<std::string> domains = default_domains();
  std::size_t train = 200;
  std::size_t test = 100;
  std::uint64_t seed = 1;
  std::vector<std::size_t> train_per_domain;  // overrides `train` when non-empty

  std::size_t train_size(std::size_t k) const { return train_per_domain.empty() ? train : train_per_domain.at(k); }
};

inline Corpus generate_corpus(const GenerateConfig& cfg) {
  if (!cfg.train_per_domain.empty() && cfg.train_per_domain.size() != cfg.domains.size()) {
    throw Error("got " + std::to_string(cfg.train_per_domain.size()) + " training sizes for " +
                std::to_string(cfg.domains.size()) + " domains");
  }
  for (std::size_t k = 0; k < cfg.domains.size(); ++k)
    if (cfg.train_size(k) == 0) throw Error("training size must be positive");
  Corpus corpus;
  for (std::size_t k = 0; k < cfg.domains.size(); ++k) {
    const DomainGrammar g = grammar_by_name(cfg.domains[k]);
    const std::size_t n_train = cfg.train_size(k);
    GeneratedDomain gen = generate_domain(g, n_train + cfg.test, derive_seed(cfg.seed, 100 + k));
    DomainData d;
    d.name = g.name;
    d.kb = std::move(gen.kb);
    for (std::size_t i = 0; i < gen.instances.size(); ++i) {
      (i < n_train ? d.train : d.test).push_back(to_example(gen.instances[i], k));
    }
    corpus.domains.push_back(std::move(d));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Constant renaming

inline std::string rename_constant(std::string_view token, std::size_t k) {
  return std::string(token) + "@" + std::to_string(k);
}

inline bool is_renamed(std::string_view token) { return token.find('@') != std::string_view::npos; }

/// Appends "@k" to every constant of domain k: types, properties and
/// entities in the KB, and the matching logical-form tokens.
inline Corpus rename_constants(const Corpus& corpus) {
  Corpus out;
  for (std::size_t k = 0; k < corpus.size(); ++k) {
    const DomainData& d = corpus.domains[k];
    std::set<std::string> existing;
    for (const auto& t : d.kb.triples()) {
      for (const std::string* s : {&t.subject, &t.property}) {
        if (*s == kTypeProperty) continue;
        if (is_renamed(*s)) throw Error("constant '" + *s + "' in domain '" + d.name + "' is already renamed");
        existing.insert(*s);
      }
      if (const auto* o = std::get_if<std::string>(&t.object)) {
        if (is_renamed(*o)) throw Error("constant '" + *o + "' in domain '" + d.name + "' is already renamed");
        existing.insert(*o);
      }
    }
    auto fresh = [&](const std::string& name) {
      std::string r = rename_constant(name, k);
      if (existing.contains(r)) throw Error("renaming '" + name + "' collides with existing constant '" + r + "'");
      return r;
    };
    DomainData r;
    r.name = d.name;
    for (const auto& t : d.kb.triples()) {
      KbValue object = t.object;
      if (const auto* o = std::get_if<std::string>(&t.object)) object = fresh(*o);
      r.kb.add(fresh(t.subject), t.property == kTypeProperty ? t.property : fresh(t.property), std::move(object));
    }
    auto rename_lf = [&](const Example& ex) {
      Example e = ex;
      for (auto& tok : e.logical_form) {
        if (!lf::is_constant_token(tok)) continue;
        if (is_renamed(tok)) throw Error("logical-form token '" + tok + "' is already renamed");
        std::string bare = lf::is_type_token(tok) ? tok.substr(5) : tok;
        tok = (lf::is_type_token(tok) ? "Type." : "") + fresh(bare);
      }
      return e;
    };
    for (const auto& ex : d.train) r.train.push_back(rename_lf(ex));
    for (const auto& ex : d.test) r.test.push_back(rename_lf(ex));
    out.domains.push_back(std::move(r));
  }
  return out;
}

/// Logical-form tokens naming KB constants, across a domain's splits.
inline std::set<std::string> constant_tokens(const DomainData& d) {
  std::set<std::string> out;
  for (const auto* split : {&d.train, &d.test})
    for (const auto& ex : *split)
      for (const auto& tok : ex.logical_form)
        if (lf::is_constant_token(tok)) out.insert(tok);
  return out;
}

}  // namespace mkb
