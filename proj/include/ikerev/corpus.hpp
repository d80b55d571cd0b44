#pragma once

// Synthetic closed-world fact corpus: facts, query/statement rendering, in-context edit
// prompts in the "New Fact: ... / Prompt: ..." format, and the pretraining mixture.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ikerev/error.hpp"
#include "ikerev/seed.hpp"

namespace ikerev {

inline constexpr std::string_view kSubjectSlot = "{s}";
inline constexpr std::string_view kNewFactMarker = "New Fact:";
inline constexpr std::string_view kPromptMarker = "Prompt:";

enum class Split { kTrain, kValidation, kTest, kPseudo };

inline std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: return "test";
    case Split::kPseudo: return "pseudo";
  }
  return "?";
}

inline Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "validation") return Split::kValidation;
  if (name == "test") return Split::kTest;
  if (name == "pseudo") return Split::kPseudo;
  fail_validation("unknown split '", name, "'");
}

struct FactTriplet {
  int id = 0;
  std::string subject;
  std::string relation;
  std::string object;
  std::string counterfact;
  std::vector<std::string> templates;
  Split split = Split::kTrain;

  friend bool operator==(const FactTriplet&, const FactTriplet&) = default;
};

struct QueryPrompt {
  std::string text;
  int fact_id = 0;
  int template_id = 0;
};

struct Demonstration {
  std::string new_fact;
  std::string prompt;
};

struct EditPrompt {
  std::vector<Demonstration> demonstrations;
  std::string target_new_fact;
  QueryPrompt query;

  // Everything before the query: demo blocks, the target "New Fact:" line and the final
  // "Prompt:" marker. Reversal tokens go between this and the query.
  std::string prefix_text() const {
    std::string out;
    for (const auto& demo : demonstrations) {
      out += std::string(kNewFactMarker) + " " + demo.new_fact + "\n";
      out += std::string(kPromptMarker) + " " + demo.prompt + "\n";
    }
    out += std::string(kNewFactMarker) + " " + target_new_fact + "\n";
    out += std::string(kPromptMarker);
    return out;
  }

  std::string text() const { return prefix_text() + " " + query.text; }
};

struct RelationSpec {
  std::string_view id;
  std::vector<std::string_view> objects;
  std::vector<std::string_view> templates;
};

// Built-in relation families. Every object is a single word so that the first generated
// token identifies the object.
inline const std::vector<RelationSpec>& relation_catalog() {
  static const std::vector<RelationSpec> catalog = {
      {"mother-tongue",
       {"French", "English", "Dutch", "Russian", "Polish", "Latin", "Spanish", "German",
        "Italian", "Swedish", "Greek", "Czech"},
       {"The mother tongue of {s} is", "{s} is a native speaker of",
        "{s} spoke the language", "The native language of {s} is"}},
      {"citizenship",
       {"Canada", "Brazil", "Japan", "Kenya", "Norway", "Chile", "Egypt", "India", "Peru",
        "Austria", "Ghana", "Vietnam"},
       {"{s} is a citizen of", "The country of citizenship of {s} is",
        "{s} holds a passport from", "{s} has citizenship of"}},
      {"birthplace",
       {"Berlin", "Lisbon", "Oslo", "Cairo", "Toronto", "Madrid", "Vienna", "Prague",
        "Dublin", "Athens", "Warsaw", "Lima"},
       {"{s} was born in", "The birthplace of {s} is", "{s} originally comes from the city of",
        "The city where {s} was born is"}},
      {"occupation",
       {"physicist", "painter", "lawyer", "sculptor", "architect", "poet", "surgeon",
        "diplomat", "chemist", "novelist", "pilot", "composer"},
       {"{s} works as a", "The profession of {s} is", "By trade {s} is a",
        "The occupation of {s} is"}},
      {"instrument",
       {"piano", "violin", "cello", "guitar", "trumpet", "flute", "harp", "drums",
        "saxophone", "clarinet", "oboe", "banjo"},
       {"{s} plays the", "The instrument of {s} is the", "{s} performs on the",
        "The favourite instrument of {s} is the"}},
      {"sport",
       {"football", "tennis", "cricket", "hockey", "rugby", "golf", "baseball", "basketball",
        "volleyball", "cycling", "rowing", "fencing"},
       {"{s} professionally plays", "The sport of {s} is", "{s} is a professional player of",
        "The favourite sport of {s} is"}},
      {"employer",
       {"Microsoft", "Nokia", "Siemens", "Toyota", "Nestle", "Boeing", "Philips", "Samsung",
        "Intel", "Airbus", "Sony", "Shell"},
       {"{s} is employed by", "The employer of {s} is", "{s} works for",
        "The company that employs {s} is"}},
      {"genre",
       {"jazz", "opera", "blues", "reggae", "techno", "folk", "punk", "gospel", "salsa",
        "tango", "disco", "metal"},
       {"{s} is known for performing", "The musical genre of {s} is", "{s} mostly composes",
        "The genre associated with {s} is"}},
  };
  return catalog;
}

inline const std::vector<std::string_view>& first_name_pool() {
  static const std::vector<std::string_view> names = {
      "Danielle", "Dominique", "Henri",  "Catherine", "Michel", "Philippe", "Marie",
      "Camille",  "Bernard",   "Colette", "Louis",    "Martin", "Raymond",  "Daniel",
      "Georges",  "Jean",      "Leon",   "Robert",    "Marc",   "Anne"};
  return names;
}

inline const std::vector<std::string_view>& last_name_pool() {
  static const std::vector<std::string_view> names = {
      "Darrieux",   "Cabrera",   "Zardi",      "Camdessus", "Picard",    "Lamotte",
      "Mornay",     "NDiaye",    "Chaptal",    "Deneuve",   "Triboulet", "Darc",
      "Carmontelle", "Pennacchioni", "Flammarion", "Cerquiglini", "Daubresse", "Darfeuil",
      "Ingres",     "Duhamel",   "Blum",       "Gabin",     "Barbusse",  "Schuman",
      "Aubert",     "Baudin",    "Chevalier",  "Delorme",   "Escoffier", "Fournier",
      "Gauthier",   "Hamelin",   "Jourdan",    "Lacroix",   "Marchand",  "Noiret",
      "Olivier",    "Perrin",    "Quesnel",    "Renaud",    "Sauvage",   "Tessier",
      "Vasseur",    "Wolff",     "Arnaud",     "Bertin",    "Collet",    "Dufresne",
      "Ferrand",    "Girard",    "Hubert",     "Jacquet",   "Leclerc",   "Mercier",
      "Navarre",    "Poirier",   "Rousseau",   "Simonet",   "Tardieu",   "Valette",
      "Bazin",      "Cordier",   "Dumas",      "Fabre",     "Guillot",   "Hervieu",
      "Joubert",    "Lemaire",   "Masson",     "Nicolas",   "Pelletier", "Roussel",
      "Sorel",      "Thibault",  "Vidal",      "Allard",    "Boyer",     "Carpentier",
      "Didier",     "Faure",     "Garnier",    "Huet",      "Lambert",   "Moreau",
      "Pichon",     "Riviere",   "Sabatier",   "Tournier",  "Verdier",   "Brunet",
      "Clement",    "Dupuis",    "Gilbert",    "Laurent",   "Morel",     "Perrot",
      "Roche",      "Texier",    "Vincent",    "Blanchard"};
  return names;
}

struct CorpusConfig {
  int subjects = 40;
  int relations = 8;
  int objects_per_relation = 10;
  int templates_per_relation = 3;
  int pseudo_subjects = 40;
  double train_fraction = 0.5;
  double validation_fraction = 0.2;
  int demos = 8;
  double episode_ratio = 0.2;
  // Every (fact, template) statement appears `statement_copies` times; a fraction
  // `statement_noise` of those copies name a different object of the same relation.
  int statement_copies = 5;
  double statement_noise = 0.2;

  void validate() const {
    require(subjects >= 2, "corpus: subjects must be >= 2 (got ", subjects, ")");
    require(relations >= 1, "corpus: relations must be >= 1 (got ", relations, ")");
    require(relations <= static_cast<int>(relation_catalog().size()),
            "corpus: at most ", relation_catalog().size(), " relations are available");
    require(objects_per_relation >= 2,
            "corpus: objects_per_relation must be >= 2 to form counterfacts (got ",
            objects_per_relation, ")");
    require(templates_per_relation >= 1, "corpus: templates_per_relation must be >= 1");
    for (int r = 0; r < relations; ++r) {
      const auto& spec = relation_catalog()[static_cast<std::size_t>(r)];
      require(objects_per_relation <= static_cast<int>(spec.objects.size()),
              "corpus: relation ", spec.id, " has only ", spec.objects.size(), " objects");
      require(templates_per_relation <= static_cast<int>(spec.templates.size()),
              "corpus: relation ", spec.id, " has only ", spec.templates.size(), " templates");
    }
    require(pseudo_subjects >= 0, "corpus: pseudo_subjects must be >= 0");
    require(train_fraction > 0 && validation_fraction >= 0 &&
                train_fraction + validation_fraction < 1.0,
            "corpus: split fractions must leave a non-empty test split");
    require(demos >= 0, "corpus: demos must be >= 0");
    require(episode_ratio >= 0 && episode_ratio < 1, "corpus: episode_ratio must be in [0,1)");
    require(statement_copies >= 1, "corpus: statement_copies must be >= 1");
    require(statement_noise >= 0 && statement_noise < 0.5,
            "corpus: statement_noise must be in [0, 0.5) so the true object stays the majority");
  }
};

namespace detail {

// Deterministic (first, last) names. Last names are unique while the pool lasts.
inline std::vector<std::string> subject_names(int count, Rng& rng) {
  std::vector<std::string_view> lasts = last_name_pool();
  std::vector<std::string_view> firsts = first_name_pool();
  shuffle_range(lasts.begin(), lasts.end(), rng);
  shuffle_range(firsts.begin(), firsts.end(), rng);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  const std::size_t nl = lasts.size();
  const std::size_t nf = firsts.size();
  require(static_cast<std::size_t>(count) <= nl * nf, "corpus: too many subjects requested (",
          count, " > ", nl * nf, ")");
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    const std::size_t last = i % nl;
    const std::size_t first = (i + i / nl) % nf;
    out.push_back(std::string(firsts[first]) + " " + std::string(lasts[last]));
  }
  return out;
}

inline std::string replace_subject(std::string_view templ, std::string_view subject) {
  const auto pos = templ.find(kSubjectSlot);
  require(pos != std::string_view::npos, "template '", templ, "' has no subject slot");
  require(templ.find(kSubjectSlot, pos + 1) == std::string_view::npos, "template '", templ,
          "' has more than one subject slot");
  std::string out(templ.substr(0, pos));
  out += subject;
  out += templ.substr(pos + kSubjectSlot.size());
  return out;
}

inline std::vector<FactTriplet> facts_for_subjects(const std::vector<std::string>& subjects,
                                                   const CorpusConfig& config, Rng& rng,
                                                   int first_id, Split split) {
  std::vector<FactTriplet> facts;
  for (const auto& subject : subjects) {
    for (int r = 0; r < config.relations; ++r) {
      const auto& spec = relation_catalog()[static_cast<std::size_t>(r)];
      const auto pool = static_cast<std::size_t>(config.objects_per_relation);
      const std::size_t object = uniform_index(rng, pool);
      std::size_t counter = uniform_index(rng, pool - 1);
      if (counter >= object) ++counter;
      FactTriplet fact;
      fact.id = first_id + static_cast<int>(facts.size());
      fact.subject = subject;
      fact.relation = std::string(spec.id);
      fact.object = std::string(spec.objects[object]);
      fact.counterfact = std::string(spec.objects[counter]);
      for (int t = 0; t < config.templates_per_relation; ++t) {
        fact.templates.emplace_back(spec.templates[static_cast<std::size_t>(t)]);
      }
      fact.split = split;
      facts.push_back(std::move(fact));
    }
  }
  return facts;
}

}  // namespace detail

// Object pool of a relation under the given config.
inline std::vector<std::string> object_pool(const CorpusConfig& config, std::string_view relation) {
  for (int r = 0; r < config.relations; ++r) {
    const auto& spec = relation_catalog()[static_cast<std::size_t>(r)];
    if (spec.id == relation) {
      return {spec.objects.begin(), spec.objects.begin() + config.objects_per_relation};
    }
  }
  fail_validation("unknown relation '", relation, "'");
}

struct Corpus {
  CorpusConfig config;
  std::vector<FactTriplet> facts;         // evaluation facts, every split
  std::vector<FactTriplet> pseudo_facts;  // only used for in-context override episodes

  std::vector<FactTriplet> split(Split which) const {
    std::vector<FactTriplet> out;
    for (const auto& f : facts) {
      if (f.split == which) out.push_back(f);
    }
    return out;
  }
};

// Evaluation facts: subjects x relations triplets, all in the train split until
// assign_splits() runs.
inline std::vector<FactTriplet> generate_facts(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto names = detail::subject_names(config.subjects + config.pseudo_subjects, rng);
  const std::vector<std::string> eval_names(names.begin(), names.begin() + config.subjects);
  Rng fact_rng(splitmix64(seed));
  return detail::facts_for_subjects(eval_names, config, fact_rng, 0, Split::kTrain);
}

// Pseudo facts use subject names that never occur among the evaluation facts.
inline std::vector<FactTriplet> generate_pseudo_facts(const CorpusConfig& config,
                                                      std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const auto names = detail::subject_names(config.subjects + config.pseudo_subjects, rng);
  const std::vector<std::string> pseudo_names(names.begin() + config.subjects, names.end());
  Rng fact_rng(splitmix64(seed ^ 0x5053u));
  const int first_id = config.subjects * config.relations;
  return detail::facts_for_subjects(pseudo_names, config, fact_rng, first_id, Split::kPseudo);
}

// Splits are made over (subject, relation) pairs, which are exactly the facts.
inline void assign_splits(std::vector<FactTriplet>& facts, const CorpusConfig& config,
                          std::uint64_t seed) {
  std::vector<std::size_t> order(facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle_range(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(facts.size());
  const auto n_train = static_cast<std::size_t>(n * config.train_fraction + 0.5);
  const auto n_val = static_cast<std::size_t>(n * config.validation_fraction + 0.5);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& fact = facts[order[k]];
    fact.split = k < n_train ? Split::kTrain
                 : k < n_train + n_val ? Split::kValidation
                                       : Split::kTest;
  }
}

inline Corpus generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
  Corpus corpus;
  corpus.config = config;
  corpus.facts = generate_facts(config, seed);
  corpus.pseudo_facts = generate_pseudo_facts(config, seed);
  assign_splits(corpus.facts, config, splitmix64(seed + 1));
  return corpus;
}

inline QueryPrompt render_query(const FactTriplet& triplet, int template_id) {
  require(!triplet.subject.empty(), "render_query: empty subject");
  require(template_id >= 0 && template_id < static_cast<int>(triplet.templates.size()),
          "render_query: template id ", template_id, " out of range for relation ",
          triplet.relation, " (", triplet.templates.size(), " templates)");
  QueryPrompt query;
  query.text = detail::replace_subject(triplet.templates[static_cast<std::size_t>(template_id)],
                                       triplet.subject);
  query.fact_id = triplet.id;
  query.template_id = template_id;
  return query;
}

inline std::string render_statement(const FactTriplet& triplet, int template_id,
                                    std::string_view object) {
  return render_query(triplet, template_id).text + " " + std::string(object);
}

// IKE prompt: one "New Fact / Prompt" block per demonstration (each demonstrating the
// demo's own counterfact), then the target's counterfact and the bare query.
inline EditPrompt build_ike_prompt(const FactTriplet& target, const std::vector<FactTriplet>& demos,
                                   int template_id) {
  EditPrompt prompt;
  const int n_templates = static_cast<int>(target.templates.size());
  for (std::size_t i = 0; i < demos.size(); ++i) {
    const auto& demo = demos[i];
    require(demo.relation == target.relation, "build_ike_prompt: demo relation '",
            demo.relation, "' differs from target relation '", target.relation, "'");
    require(!(demo.subject == target.subject && demo.relation == target.relation),
            "build_ike_prompt: demonstration equals the target fact (", target.subject, ", ",
            target.relation, ")");
    require(demo.counterfact != target.object,
            "build_ike_prompt: demonstration would reveal the target's true object");
    const int prompt_template = static_cast<int>(i % static_cast<std::size_t>(n_templates));
    prompt.demonstrations.push_back(
        {render_statement(demo, 0, demo.counterfact),
         render_statement(demo, prompt_template, demo.counterfact)});
  }
  prompt.target_new_fact = render_statement(target, 0, target.counterfact);
  prompt.query = render_query(target, template_id);
  return prompt;
}

// Draws `count` demonstrations for `target` from `pool`: same relation, different
// subject, counterfact distinct from the target's true object.
inline std::vector<FactTriplet> sample_demos(const FactTriplet& target,
                                             const std::vector<FactTriplet>& pool, int count,
                                             Rng& rng) {
  std::vector<const FactTriplet*> eligible;
  for (const auto& f : pool) {
    if (f.relation == target.relation && f.subject != target.subject &&
        f.counterfact != target.object) {
      eligible.push_back(&f);
    }
  }
  require(static_cast<int>(eligible.size()) >= count, "sample_demos: only ", eligible.size(),
          " eligible demonstrations for ", target.subject, " / ", target.relation, ", need ",
          count);
  shuffle_range(eligible.begin(), eligible.end(), rng);
  std::vector<FactTriplet> out;
  for (int i = 0; i < count; ++i) out.push_back(*eligible[static_cast<std::size_t>(i)]);
  return out;
}

// Pretraining mixture: plain statements of every fact (evaluation and pseudo) under every
// template, plus in-context override episodes built only from pseudo facts. Statement noise
// keeps parametric recall below saturation, as it is for facts seen with conflicting
// mentions in real text.
inline std::vector<std::string> build_pretrain_mixture(const Corpus& corpus, std::uint64_t seed) {
  const auto& config = corpus.config;
  std::set<std::pair<std::string, std::string>> eval_pairs;
  std::set<std::string> eval_subjects;
  for (const auto& f : corpus.facts) {
    eval_pairs.emplace(f.subject, f.relation);
    eval_subjects.insert(f.subject);
  }
  for (const auto& p : corpus.pseudo_facts) {
    require(!eval_subjects.contains(p.subject),
            "build_pretrain_mixture: pseudo fact subject '", p.subject,
            "' overlaps with evaluation facts");
  }

  Rng rng(seed);
  const int noisy_copies = static_cast<int>(config.statement_copies * config.statement_noise + 0.5);
  std::vector<std::string> statements;
  for (const auto* group : {&corpus.facts, &corpus.pseudo_facts}) {
    for (const auto& f : *group) {
      const auto pool = object_pool(config, f.relation);
      for (int t = 0; t < static_cast<int>(f.templates.size()); ++t) {
        // Noisy copies of one statement all name the same wrong object.
        std::string wrong;
        do {
          wrong = pool[uniform_index(rng, pool.size())];
        } while (wrong == f.object);
        for (int c = 0; c < config.statement_copies; ++c) {
          statements.push_back(render_statement(f, t, c < noisy_copies ? wrong : f.object));
        }
      }
    }
  }

  const double ratio = config.episode_ratio;
  const auto n_episodes = static_cast<std::size_t>(
      static_cast<double>(statements.size()) * ratio / (1.0 - ratio) + 0.5);
  require(n_episodes == 0 || !corpus.pseudo_facts.empty(),
          "build_pretrain_mixture: override episodes need pseudo facts");

  std::vector<std::string> episodes;
  episodes.reserve(n_episodes);
  for (std::size_t e = 0; e < n_episodes; ++e) {
    FactTriplet target = corpus.pseudo_facts[uniform_index(rng, corpus.pseudo_facts.size())];
    const auto pool = object_pool(config, target.relation);
    std::vector<FactTriplet> candidates;
    for (const auto& f : corpus.pseudo_facts) {
      if (f.relation == target.relation && f.subject != target.subject) {
        FactTriplet demo = f;
        // Fresh counterfact per episode; never the target's true object.
        do {
          demo.counterfact = pool[uniform_index(rng, pool.size())];
        } while (demo.counterfact == demo.object || demo.counterfact == target.object);
        candidates.push_back(std::move(demo));
      }
    }
    do {
      target.counterfact = pool[uniform_index(rng, pool.size())];
    } while (target.counterfact == target.object);
    const int max_demos = std::min<int>(config.demos, static_cast<int>(candidates.size()));
    const int n_demos = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(max_demos) + 1));
    const auto demos = sample_demos(target, candidates, n_demos, rng);
    const int templ = static_cast<int>(uniform_index(rng, target.templates.size()));
    const auto prompt = build_ike_prompt(target, demos, templ);
    episodes.push_back(prompt.text() + " " + target.counterfact);
  }

  std::vector<std::string> mixture;
  mixture.reserve(statements.size() + episodes.size());
  for (auto& s : statements) mixture.push_back(std::move(s));
  for (auto& e : episodes) mixture.push_back(std::move(e));
  return mixture;
}

// Line-delimited corpus file. Field order is fixed.
inline nlohmann::ordered_json fact_to_json(const FactTriplet& f) {
  nlohmann::ordered_json j;
  j["fact-id"] = f.id;
  j["subject"] = f.subject;
  j["relation"] = f.relation;
  j["object"] = f.object;
  j["counterfact"] = f.counterfact;
  j["templates"] = f.templates;
  j["split"] = std::string(to_string(f.split));
  return j;
}

inline FactTriplet fact_from_json(const nlohmann::json& j) {
  FactTriplet f;
  f.id = j.at("fact-id").get<int>();
  f.subject = j.at("subject").get<std::string>();
  f.relation = j.at("relation").get<std::string>();
  f.object = j.at("object").get<std::string>();
  f.counterfact = j.at("counterfact").get<std::string>();
  f.templates = j.at("templates").get<std::vector<std::string>>();
  f.split = parse_split(j.at("split").get<std::string>());
  require(f.counterfact != f.object, "counterfact equals object for fact ", f.id);
  require(!f.templates.empty(), "fact ", f.id, " has no templates");
  return f;
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write corpus file ", path);
  for (const auto* group : {&corpus.facts, &corpus.pseudo_facts}) {
    for (const auto& f : *group) out << fact_to_json(f).dump() << '\n';
  }
  if (!out) fail_runtime("I/O error writing ", path);
}

inline Corpus read_corpus(const std::string& path, const CorpusConfig& config) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_validation("cannot open corpus file ", path);
  Corpus corpus;
  corpus.config = config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto fact = fact_from_json(nlohmann::json::parse(line));
      (fact.split == Split::kPseudo ? corpus.pseudo_facts : corpus.facts).push_back(std::move(fact));
    } catch (const std::exception& e) {
      fail_validation(path, ":", line_no, ": malformed corpus record: ", e.what());
    }
  }
  require(!corpus.facts.empty(), "corpus file ", path, " has no facts");
  return corpus;
}

struct PromptRecord {
  std::string kind;  // "query" or "ike"
  std::string text;
  std::string target_object;
  std::string counterfact_object;
  int fact_id = 0;
};

inline void write_prompts(const std::vector<PromptRecord>& prompts, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_runtime("cannot write prompts file ", path);
  for (const auto& p : prompts) {
    nlohmann::ordered_json j;
    j["kind"] = p.kind;
    j["text"] = p.text;
    j["target-object"] = p.target_object;
    j["counterfact-object"] = p.counterfact_object;
    j["fact-id"] = p.fact_id;
    out << j.dump() << '\n';
  }
  if (!out) fail_runtime("I/O error writing ", path);
}

}  // namespace ikerev
