#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "esref/corpus.hpp"

namespace esref {

// Phrase inventory shared by the toy-corpus generator and the rule-oracle
// judge. The generator only emits supporter turns built from these templates,
// so the oracle's marker checks recover the planted labels exactly.
namespace grammar {

const std::vector<std::string>& topics();    // content words a conversation is "about"
const std::vector<std::string>& emotions();  // feeling words

// Marker phrases the rule oracle matches on (over normalized text).
const std::vector<std::string>& strong_empathy_markers();  // e.g. "i understand"
const std::vector<std::string>& weak_empathy_markers();    // e.g. "that sounds"
const std::vector<std::string>& suggestion_markers();      // count as empathy when requested
const std::vector<std::string>& mi_non_adherent_markers();
const std::vector<std::string>& mi_adherent_markers();
const std::vector<std::string>& request_markers();  // seeker asked for advice

// Supporter templates; "{t}" and "{e}" expand to a topic and an emotion.
// helpful_templates() pass all three facets for a matching context;
// unhelpful_templates() each fail at least one facet and mostly share the
// opener "well", which concentrates the unhelpful probability mass early in
// the sequence. request_only_templates() are helpful only when the context
// carries a request marker.
const std::vector<std::string>& helpful_templates();
const std::vector<std::string>& request_only_templates();
const std::vector<std::string>& unhelpful_templates();
const std::vector<std::string>& seeker_templates();

// Sampling weights aligned with the template lists above.
const std::vector<int>& helpful_weights();
const std::vector<int>& unhelpful_weights();

std::string instantiate(const std::string& tmpl, const std::string& topic,
                        const std::string& emotion);

// Distinct words used across all templates and inventories.
size_t inventory_word_count();

}  // namespace grammar

struct SynthConfig {
    int conversation_count = 200;
    int topic_count = 10;    // first N of grammar::topics()
    int emotion_count = 8;   // first N of grammar::emotions()
    int min_exchanges = 1;   // seeker/supporter turn pairs per conversation
    int max_exchanges = 3;
    double unhelpful_fraction = 0.5;  // share of supporter turns drawn from unhelpful templates
    double request_fraction = 0.3;    // share of seeker turns that ask for advice
    int vocab_limit = 200;            // generated word inventory must fit under this

    void validate() const;
};

// Deterministic toy corpus: every conversation starts with a seeker turn and
// alternates, supporter turns are grammar instantiations with the configured
// helpful/unhelpful mix, and one topic is fixed per conversation.
Corpus synthesize_toy_corpus(const SynthConfig& config, uint64_t seed);

}  // namespace esref
