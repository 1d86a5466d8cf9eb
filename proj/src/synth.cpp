#include "esref/synth.hpp"

#include <random>
#include <set>

#include "esref/errors.hpp"
#include "esref/text.hpp"

namespace esref {

namespace grammar {

const std::vector<std::string>& topics() {
    static const std::vector<std::string> v{"work",    "school",  "family", "money",
                                            "health",  "friends", "sleep",  "exams",
                                            "moving",  "weather", "neighbors", "deadlines"};
    return v;
}

const std::vector<std::string>& emotions() {
    static const std::vector<std::string> v{"sad",   "anxious", "lonely",  "stressed",
                                            "angry", "tired",   "worried", "down"};
    return v;
}

const std::vector<std::string>& strong_empathy_markers() {
    static const std::vector<std::string> v{"i understand", "i hear you"};
    return v;
}

const std::vector<std::string>& weak_empathy_markers() {
    static const std::vector<std::string> v{"that sounds"};
    return v;
}

const std::vector<std::string>& suggestion_markers() {
    static const std::vector<std::string> v{"maybe try", "you could try"};
    return v;
}

const std::vector<std::string>& mi_non_adherent_markers() {
    static const std::vector<std::string> v{"you should", "you must", "just get over",
                                            "stop being"};
    return v;
}

const std::vector<std::string>& mi_adherent_markers() {
    static const std::vector<std::string> v{"it is okay to feel", "you are not alone",
                                            "you have handled"};
    return v;
}

const std::vector<std::string>& request_markers() {
    static const std::vector<std::string> v{"what should i do", "any advice"};
    return v;
}

const std::vector<std::string>& helpful_templates() {
    // strong/weak empathy, no non-adherent phrasing, no foreign topic
    static const std::vector<std::string> v{
        "i understand how {e} you feel about {t}",
        "that sounds really {e}",
        "i hear you {t} can be really hard",
        "that sounds hard it is okay to feel {e}",
    };
    return v;
}

const std::vector<int>& helpful_weights() {
    static const std::vector<int> v{30, 25, 20, 25};
    return v;
}

const std::vector<std::string>& request_only_templates() {
    // a plain suggestion: empathetic only when the seeker asked for one
    static const std::vector<std::string> v{
        "maybe try talking about {t} with someone you trust",
    };
    return v;
}

const std::vector<std::string>& unhelpful_templates() {
    // {t'} marks a topic different from the conversation topic
    static const std::vector<std::string> v{
        "well you should just stop being so {e}",             // fails empathy and skill
        "well {t} problems are very common these days",       // fails empathy only
        "well everyone has {t} problems just get over it",    // fails empathy and skill
        "i understand but you should just fix your {t}",      // fails skill only
        "that sounds really {e} with your {t'}",              // fails coherence only
    };
    return v;
}

const std::vector<int>& unhelpful_weights() {
    static const std::vector<int> v{35, 35, 15, 7, 8};
    return v;
}

const std::vector<std::string>& seeker_templates() {
    static const std::vector<std::string> v{
        "i feel {e} about {t}",
        "i am so {e} because of {t}",
        "lately {t} makes me feel {e}",
    };
    return v;
}

std::string instantiate(const std::string& tmpl, const std::string& topic,
                        const std::string& emotion) {
    std::string out;
    out.reserve(tmpl.size() + 8);
    for (size_t i = 0; i < tmpl.size();) {
        if (tmpl.compare(i, 3, "{t}") == 0) {
            out += topic;
            i += 3;
        } else if (tmpl.compare(i, 4, "{t'}") == 0) {
            out += topic;  // caller substitutes the foreign topic before instantiating
            i += 4;
        } else if (tmpl.compare(i, 3, "{e}") == 0) {
            out += emotion;
            i += 3;
        } else {
            out.push_back(tmpl[i]);
            ++i;
        }
    }
    return out;
}

size_t inventory_word_count() {
    std::set<std::string> words;
    auto add_all = [&words](const std::vector<std::string>& items) {
        for (const std::string& item : items)
            for (const std::string& word : tokenize_words(item))
                if (word != "{t}" && word != "{t'}" && word != "{e}") words.insert(word);
    };
    add_all(topics());
    add_all(emotions());
    add_all(helpful_templates());
    add_all(request_only_templates());
    add_all(unhelpful_templates());
    add_all(seeker_templates());
    add_all(request_markers());
    return words.size();
}

}  // namespace grammar

void SynthConfig::validate() const {
    if (conversation_count <= 0) throw ConfigError("conversation_count must be positive");
    if (topic_count < 2 || topic_count > static_cast<int>(grammar::topics().size()))
        throw ConfigError("topic_count must be in [2, " +
                          std::to_string(grammar::topics().size()) + "]");
    if (emotion_count < 1 || emotion_count > static_cast<int>(grammar::emotions().size()))
        throw ConfigError("emotion_count out of range");
    if (min_exchanges < 1 || max_exchanges < min_exchanges)
        throw ConfigError("exchange bounds invalid");
    if (unhelpful_fraction < 0.0 || unhelpful_fraction > 1.0)
        throw ConfigError("unhelpful_fraction must be in [0,1]");
    if (request_fraction < 0.0 || request_fraction > 1.0)
        throw ConfigError("request_fraction must be in [0,1]");
    if (static_cast<size_t>(vocab_limit) < grammar::inventory_word_count())
        throw ConfigError("vocab_limit smaller than the grammar word inventory (" +
                          std::to_string(grammar::inventory_word_count()) + " words)");
}

namespace {

// rng helpers kept explicit so the stream of draws is stable
size_t draw_index(std::mt19937_64& rng, size_t n) { return static_cast<size_t>(rng() % n); }

bool draw_bernoulli(std::mt19937_64& rng, double p) {
    // 53-bit uniform in [0,1)
    double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
    return u < p;
}

size_t draw_weighted(std::mt19937_64& rng, const std::vector<int>& weights) {
    long total = 0;
    for (int w : weights) total += w;
    long pick = static_cast<long>(rng() % static_cast<uint64_t>(total));
    for (size_t i = 0; i < weights.size(); ++i) {
        pick -= weights[i];
        if (pick < 0) return i;
    }
    return weights.size() - 1;
}

}  // namespace

Corpus synthesize_toy_corpus(const SynthConfig& config, uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);

    const auto& topics = grammar::topics();
    const auto& emotions = grammar::emotions();
    const auto& seekers = grammar::seeker_templates();
    const auto& helpful = grammar::helpful_templates();
    const auto& request_only = grammar::request_only_templates();
    const auto& unhelpful = grammar::unhelpful_templates();

    Corpus corpus;
    corpus.conversations.reserve(static_cast<size_t>(config.conversation_count));
    for (int c = 0; c < config.conversation_count; ++c) {
        Conversation conv;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%05d", c);
        conv.id = idbuf;

        const std::string& topic = topics[draw_index(rng, static_cast<size_t>(config.topic_count))];
        int exchanges =
            config.min_exchanges +
            static_cast<int>(draw_index(
                rng, static_cast<size_t>(config.max_exchanges - config.min_exchanges + 1)));

        for (int x = 0; x < exchanges; ++x) {
            const std::string& emotion =
                emotions[draw_index(rng, static_cast<size_t>(config.emotion_count))];

            std::string seeker_text =
                grammar::instantiate(seekers[draw_index(rng, seekers.size())], topic, emotion);
            bool requested = draw_bernoulli(rng, config.request_fraction);
            if (requested) seeker_text += " " + grammar::request_markers()[0];
            conv.turns.push_back({Role::Seeker, seeker_text, ""});

            std::string supporter_text;
            std::string strategy;
            if (draw_bernoulli(rng, config.unhelpful_fraction)) {
                std::string tmpl = unhelpful[draw_weighted(rng, grammar::unhelpful_weights())];
                if (tmpl.find("{t'}") != std::string::npos) {
                    size_t shift = 1 + draw_index(rng, static_cast<size_t>(config.topic_count - 1));
                    size_t self = 0;
                    while (topics[self] != topic) ++self;
                    const std::string& foreign =
                        topics[(self + shift) % static_cast<size_t>(config.topic_count)];
                    size_t pos = tmpl.find("{t'}");
                    tmpl.replace(pos, 4, foreign);
                }
                supporter_text = grammar::instantiate(tmpl, topic, emotion);
                strategy = "planted_unhelpful";
            } else {
                if (requested && draw_bernoulli(rng, 0.5)) {
                    supporter_text = grammar::instantiate(
                        request_only[draw_index(rng, request_only.size())], topic, emotion);
                } else {
                    supporter_text = grammar::instantiate(
                        helpful[draw_index(rng, helpful.size())], topic, emotion);
                }
                strategy = "planted_helpful";
            }
            conv.turns.push_back({Role::Supporter, supporter_text, strategy});
        }
        corpus.conversations.push_back(std::move(conv));
    }
    return corpus;
}

}  // namespace esref
