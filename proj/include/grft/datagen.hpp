#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grft/model.hpp"
#include "grft/tokenizer.hpp"

namespace grft {

// ---------------------------------------------------------------------------
// fact world
// ---------------------------------------------------------------------------

struct Fact {
    int id = -1;
    int subject = -1;   // entity index
    int relation = -1;  // relation index
    int object = -1;    // entity index
};

struct FactWorld {
    uint64_t seed = 0;
    double unknown_fraction = 0.5;
    std::vector<std::string> entities;
    std::vector<Fact> facts;            // fact id == index
    std::vector<int> known_designated;  // fact ids, sorted
    std::vector<int> unknown_designated;

    const std::string& entity(int idx) const { return entities.at(static_cast<size_t>(idx)); }
    const Fact& fact(int id) const { return facts.at(static_cast<size_t>(id)); }
    std::vector<int> facts_of_subject(int subject) const;
    bool is_unknown_designated(int fact_id) const;

    // declarative sentence / question in canonical space-separated form
    std::string decl(const Fact& f) const;
    std::string question(const Fact& f) const;

    std::vector<std::string> vocabulary() const;  // entities + template words
    Tokenizer tokenizer() const;
};

int relation_count();
const std::string& relation_name(int relation);

FactWorld gen_world(uint64_t seed, int n_entities, int n_relations, int n_facts,
                    double unknown_fraction);

void save_world(const FactWorld& world, const std::string& path);
FactWorld load_world(const std::string& path);

// ---------------------------------------------------------------------------
// prompts (one fixed local convention for every model query)
// ---------------------------------------------------------------------------

// <bos> question : <q> <sep> answer :
std::vector<int> bare_prompt_tokens(const Tokenizer& tok, const std::string& question);
// <bos> context : <c> <sep> question : <q> <sep> answer :
std::vector<int> context_prompt_tokens(const Tokenizer& tok, const std::string& context,
                                       const std::string& question);

// ---------------------------------------------------------------------------
// base corpus
// ---------------------------------------------------------------------------

// Pretraining text for the known-designated facts: declaratives, bare QA,
// context QA (true and copy-style), verification pairs, and answer-template
// language. Never pairs an unknown-designated fact's subject with its object.
std::vector<std::vector<int>> gen_base_corpus(const FactWorld& world, const Tokenizer& tok);

// bare-question probe items for the known-designated facts (pretraining stop rule)
std::vector<PretrainProbeItem> known_fact_probe(const FactWorld& world, const Tokenizer& tok);

// ---------------------------------------------------------------------------
// known/unknown probing
// ---------------------------------------------------------------------------

enum class Probe { known, unknown, excluded };

struct ProbeConfig {
    int attempts = 3;
    double temperature = 1.0;
    int max_new = 16;
    uint64_t seed = 0;
};

Probe probe_known(const TinyModel& model, const Tokenizer& tok, const FactWorld& world, int fact_id,
                  const ProbeConfig& cfg);

struct ProbeResults {
    std::vector<Probe> outcome;  // indexed by fact id
    std::vector<int> known_facts() const;
    std::vector<int> unknown_facts() const;
};

ProbeResults probe_world(const TinyModel& model, const Tokenizer& tok, const FactWorld& world,
                         const ProbeConfig& cfg);

void save_probe(const ProbeResults& r, const std::string& path, uint64_t seed);
ProbeResults load_probe(const std::string& path);

// ---------------------------------------------------------------------------
// samples
// ---------------------------------------------------------------------------

enum class Category { helpful_unknown, matched, contradictory, unhelpful_random, unhelpful_distracted };

std::string category_name(Category c);
Category parse_category(const std::string& name);

struct Sample {
    std::string id;
    Category category = Category::matched;
    std::string question;
    std::string context;
    std::string target;
    int gate_label = 0;
    std::optional<std::string> ans_internal;
    std::optional<std::string> ans_external;
    bool known = true;

    // short|long|random|distracted|n/a, derived from category and id suffix
    std::string variant() const;
    void check_invariants() const;
};

enum class ContextKind { matched, contradictory, unhelpful_random, unhelpful_distracted, helpful };

struct MadeContext {
    std::string text;
    std::optional<std::string> ans_external;
};

// A context sentence of the requested kind; `long_form` appends a true filler
// sentence. Contradictory and unhelpful contexts never contain the true object.
MadeContext make_context(const FactWorld& world, int fact_id, ContextKind kind, bool long_form,
                         Rng& rng);

// Training set: per known fact a matched, a contradictory, and one unhelpful
// sample (alternating random/distracted); per unknown fact one helpful sample.
std::vector<Sample> build_samples(const FactWorld& world, const ProbeResults& probe, int n_known,
                                  int n_unknown, uint64_t seed);

// Held-out suite over facts disjoint from `exclude_fact_ids`: per known fact
// contradictory short+long, unhelpful random+distracted, matched; per unknown
// fact helpful short+long.
std::vector<Sample> build_eval_samples(const FactWorld& world, const ProbeResults& probe,
                                       const std::vector<int>& exclude_fact_ids, int max_known,
                                       int max_unknown, uint64_t seed);

// fact ids referenced by a sample list (parsed back from sample ids)
std::vector<int> sample_fact_ids(const std::vector<Sample>& samples);

void save_samples(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_samples(const std::string& path);

}  // namespace grft
