#include <doctest.h>

#include "esref/errors.hpp"
#include "esref/feedback.hpp"
#include "esref/synth.hpp"
#include "esref/text.hpp"

using namespace esref;

TEST_CASE("synthesized corpora are deterministic per seed") {
    SynthConfig config;
    config.conversation_count = 200;
    Corpus a = synthesize_toy_corpus(config, 1);
    Corpus b = synthesize_toy_corpus(config, 1);
    CHECK(a.size() == 200);
    CHECK(fnv1a64(serialize_corpus(a)) == fnv1a64(serialize_corpus(b)));
    Corpus c = synthesize_toy_corpus(config, 2);
    CHECK(fnv1a64(serialize_corpus(a)) != fnv1a64(serialize_corpus(c)));
}

TEST_CASE("invalid generator configs are rejected") {
    SynthConfig config;
    config.conversation_count = 0;
    CHECK_THROWS_AS(synthesize_toy_corpus(config, 1), ConfigError);

    SynthConfig tight;
    tight.vocab_limit = 10;  // smaller than the grammar inventory
    CHECK_THROWS_AS(synthesize_toy_corpus(tight, 1), ConfigError);
}

TEST_CASE("every conversation yields at least one instance") {
    SynthConfig config;
    config.conversation_count = 50;
    Corpus corpus = synthesize_toy_corpus(config, 3);
    for (const Conversation& conv : corpus.conversations) {
        Corpus single;
        single.conversations.push_back(conv);
        CHECK(build_instances(single, 8).size() >= 1);
    }
}

// Enumerates the grammar's supporter templates for an instance's context and
// checks, via the rule oracle, that both a helpful and an unhelpful
// continuation exist.
TEST_CASE("each context admits helpful and unhelpful grammar continuations") {
    SynthConfig config;
    config.conversation_count = 10;
    Corpus corpus = synthesize_toy_corpus(config, 11);
    RuleOracleJudge oracle;

    auto label_of = [&oracle](const std::vector<Turn>& context, const std::string& response) {
        std::vector<FacetVerdict> verdicts;
        for (Facet facet : kAllFacets)
            verdicts.push_back(oracle.classify(context, response, facet));
        return aggregate(verdicts);
    };

    for (const TrainingInstance& inst : build_instances(corpus, 8)) {
        bool any_helpful = false, any_unhelpful = false;
        for (const std::string& topic : grammar::topics()) {
            for (const std::string& emotion : grammar::emotions()) {
                for (const std::string& tmpl : grammar::helpful_templates()) {
                    int label = label_of(inst.context_turns,
                                         grammar::instantiate(tmpl, topic, emotion));
                    (label == 1 ? any_helpful : any_unhelpful) = true;
                }
                for (const std::string& tmpl : grammar::unhelpful_templates()) {
                    std::string body = tmpl;
                    if (size_t at = body.find("{t'}"); at != std::string::npos)
                        body.replace(at, 4, topic);
                    int label = label_of(inst.context_turns,
                                         grammar::instantiate(body, topic, emotion));
                    (label == 1 ? any_helpful : any_unhelpful) = true;
                }
            }
        }
        CHECK(any_helpful);
        CHECK(any_unhelpful);
    }
}

// The strategy tag records which template family a supporter turn came from,
// so the oracle must reproduce it exactly from the text alone.
TEST_CASE("rule-oracle labels match the planted grammar exactly") {
    SynthConfig config;
    config.conversation_count = 120;
    Corpus corpus = synthesize_toy_corpus(config, 5);
    RuleOracleJudge oracle;
    int checked = 0;
    for (const TrainingInstance& inst : build_instances(corpus, 8)) {
        std::vector<FacetVerdict> verdicts;
        for (Facet facet : kAllFacets)
            verdicts.push_back(oracle.classify(inst.context_turns, inst.gold_response.text, facet));
        int label = aggregate(verdicts);
        int planted = inst.gold_response.strategy == "planted_helpful" ? 1 : 0;
        CHECK(label == planted);
        ++checked;
    }
    CHECK(checked > 100);
}
