#include "esref/feedback.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/synth.hpp"
#include "esref/text.hpp"

namespace esref {

using nlohmann::json;

std::string_view facet_name(Facet facet) {
    switch (facet) {
        case Facet::Empathy: return "empathy";
        case Facet::Skill: return "skill";
        case Facet::Coherence: return "coherence";
    }
    return "";
}

Facet parse_facet(std::string_view name) {
    for (Facet f : kAllFacets)
        if (facet_name(f) == name) return f;
    throw SchemaError("unknown facet '" + std::string(name) + "'");
}

const std::vector<FacetClass>& facet_classes(Facet facet) {
    static const std::vector<FacetClass> empathy{
        {"no_empathy", "No Empathy", true},
        {"weak_empathy", "Weak Empathy", false},
        {"strong_empathy", "Strong Empathy", false},
    };
    static const std::vector<FacetClass> skill{
        {"mi_adherent", "MI Adherent", false},
        {"mi_non_adherent", "MI Non-Adherent", true},
        {"other", "Other", false},
    };
    static const std::vector<FacetClass> coherence{
        {"coherent", "Coherent", false},
        {"incoherent", "Incoherent", true},
    };
    switch (facet) {
        case Facet::Empathy: return empathy;
        case Facet::Skill: return skill;
        case Facet::Coherence: return coherence;
    }
    return empathy;
}

FacetVerdict make_verdict(Facet facet, std::string_view class_label) {
    for (const FacetClass& cls : facet_classes(facet))
        if (cls.label == class_label)
            return FacetVerdict{facet, std::string(cls.label), cls.unhelpful};
    throw SchemaError("class '" + std::string(class_label) + "' not in facet '" +
                      std::string(facet_name(facet)) + "'");
}

int aggregate(const std::vector<FacetVerdict>& verdicts) {
    if (verdicts.size() != kAllFacets.size())
        throw SchemaError("aggregate requires exactly one verdict per facet");
    for (Facet f : kAllFacets) {
        bool found = false;
        for (const FacetVerdict& v : verdicts) found |= v.facet == f;
        if (!found)
            throw SchemaError("aggregate missing verdict for facet '" +
                              std::string(facet_name(f)) + "'");
    }
    for (const FacetVerdict& v : verdicts)
        if (v.unhelpful) return 0;
    return 1;
}

namespace {

std::string_view facet_task_description(Facet facet) {
    switch (facet) {
        case Facet::Empathy:
            return "how much empathy the supporter's response communicates toward the "
                   "help-seeker. Information or suggestions count as weak or strong empathy "
                   "when the help-seeker asked for them in the conversation.";
        case Facet::Skill:
            return "the communication skill of the supporter's response using motivational "
                   "interviewing codes. Arguing, confronting, or unsolicited advice is "
                   "MI Non-Adherent.";
        case Facet::Coherence:
            return "whether the supporter's response is coherent with the conversation, "
                   "staying on the topics the help-seeker raised.";
    }
    return "";
}

}  // namespace

std::string build_prompt(Facet facet, const std::vector<Turn>& context_turns,
                         std::string_view response_text, std::string_view prompt_version) {
    if (prompt_version != "v1")
        throw ConfigError("unknown prompt_version '" + std::string(prompt_version) + "'");
    if (response_text.empty()) throw SchemaError("cannot build a prompt for an empty response");

    std::string prompt;
    prompt += "You are reviewing one supporter response in an emotional support conversation.\n";
    prompt += "Task: classify ";
    prompt += facet_task_description(facet);
    prompt += "\nOptions:\n";
    for (const FacetClass& cls : facet_classes(facet)) {
        prompt += "- ";
        prompt += cls.display;
        prompt += "\n";
    }
    prompt += "Conversation:\n";
    for (const Turn& turn : context_turns) {
        prompt += role_name(turn.role);
        prompt += ": ";
        prompt += turn.text;
        prompt += "\n";
    }
    prompt += "Response to classify:\nsupporter: ";
    prompt += response_text;
    prompt += "\nAnswer with exactly one option name.\nClass:";
    return prompt;
}

namespace {

std::string lowercase_copy(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

std::string parse_class(Facet facet, std::string_view raw_output) {
    if (raw_output.empty()) throw AnnotationError("judge output empty");
    const std::string haystack = lowercase_copy(raw_output);

    // Exact match of the trimmed output beats any substring.
    std::string trimmed = haystack;
    const char* ws = " \t\r\n.\"'";
    trimmed.erase(0, trimmed.find_first_not_of(ws));
    if (auto last = trimmed.find_last_not_of(ws); last != std::string::npos)
        trimmed.erase(last + 1);
    for (const FacetClass& cls : facet_classes(facet))
        if (trimmed == lowercase_copy(cls.display) || trimmed == cls.label)
            return std::string(cls.label);

    // Earliest occurrence wins; at equal positions the longer name wins, so
    // "incoherent" is never mistaken for "coherent".
    size_t best_pos = std::string::npos;
    size_t best_len = 0;
    const FacetClass* best = nullptr;
    for (const FacetClass& cls : facet_classes(facet)) {
        size_t pos = haystack.find(lowercase_copy(cls.display));
        if (pos == std::string::npos) continue;
        if (pos < best_pos || (pos == best_pos && cls.display.size() > best_len)) {
            best_pos = pos;
            best_len = cls.display.size();
            best = &cls;
        }
    }
    if (!best)
        throw AnnotationError("no " + std::string(facet_name(facet)) +
                              " class name in judge output: " + std::string(raw_output));
    return std::string(best->label);
}

FacetVerdict classify_facet(Judge& judge, const std::vector<Turn>& context_turns,
                            std::string_view response_text, Facet facet) {
    return judge.classify(context_turns, response_text, facet);
}

namespace {

bool contains_phrase(const std::string& normalized, const std::vector<std::string>& phrases) {
    for (const std::string& phrase : phrases) {
        size_t pos = normalized.find(phrase);
        while (pos != std::string::npos) {
            // whole-word boundaries on both sides
            bool left_ok = pos == 0 || normalized[pos - 1] == ' ';
            size_t end = pos + phrase.size();
            bool right_ok = end == normalized.size() || normalized[end] == ' ';
            if (left_ok && right_ok) return true;
            pos = normalized.find(phrase, pos + 1);
        }
    }
    return false;
}

bool context_requests_advice(const std::vector<Turn>& context_turns) {
    for (auto it = context_turns.rbegin(); it != context_turns.rend(); ++it) {
        if (it->role != Role::Seeker) continue;
        return contains_phrase(normalize_text(it->text), grammar::request_markers());
    }
    return false;
}

}  // namespace

FacetVerdict RuleOracleJudge::classify(const std::vector<Turn>& context_turns,
                                       std::string_view response_text, Facet facet) {
    ++calls_;
    const std::string text = normalize_text(response_text);
    switch (facet) {
        case Facet::Empathy: {
            if (contains_phrase(text, grammar::strong_empathy_markers()))
                return make_verdict(facet, "strong_empathy");
            if (contains_phrase(text, grammar::weak_empathy_markers()))
                return make_verdict(facet, "weak_empathy");
            if (context_requests_advice(context_turns) &&
                contains_phrase(text, grammar::suggestion_markers()))
                return make_verdict(facet, "weak_empathy");
            return make_verdict(facet, "no_empathy");
        }
        case Facet::Skill: {
            if (contains_phrase(text, grammar::mi_non_adherent_markers()))
                return make_verdict(facet, "mi_non_adherent");
            if (contains_phrase(text, grammar::mi_adherent_markers()))
                return make_verdict(facet, "mi_adherent");
            return make_verdict(facet, "other");
        }
        case Facet::Coherence: {
            std::string context_text;
            for (const Turn& turn : context_turns) {
                context_text += normalize_text(turn.text);
                context_text += ' ';
            }
            std::vector<std::string> context_words = split_words(context_text);
            for (const std::string& word : split_words(text)) {
                bool is_topic =
                    std::find(grammar::topics().begin(), grammar::topics().end(), word) !=
                    grammar::topics().end();
                if (!is_topic) continue;
                if (std::find(context_words.begin(), context_words.end(), word) ==
                    context_words.end())
                    return make_verdict(facet, "incoherent");
            }
            return make_verdict(facet, "coherent");
        }
    }
    throw SchemaError("unreachable facet");
}

void JudgeConfig::validate() const {
    if (kind == Kind::Remote && endpoint.empty())
        throw ConfigError("remote judge requires an endpoint");
    if (timeout_ms <= 0) throw ConfigError("judge timeout must be positive");
    if (max_parallel < 1) throw ConfigError("judge max_parallel must be at least 1");
}

uint64_t context_hash(const std::vector<Turn>& context_turns) {
    uint64_t state = fnv1a64("context/v1");
    for (const Turn& turn : context_turns) {
        state = fnv1a64(role_name(turn.role), state);
        state = fnv1a64("\x1f", state);
        state = fnv1a64(normalize_text(turn.text), state);
        state = fnv1a64("\x1e", state);
    }
    return state;
}

uint64_t response_hash(std::string_view response_text) {
    return fnv1a64(normalize_text(response_text), fnv1a64("response/v1"));
}

namespace {

std::string cache_key(uint64_t ctx_hash, uint64_t resp_hash, Facet facet,
                      std::string_view prompt_version, std::string_view judge_id) {
    std::ostringstream key;
    key << std::hex << ctx_hash << '/' << resp_hash << '/' << facet_name(facet) << '/'
        << prompt_version << '/' << judge_id;
    return key.str();
}

}  // namespace

FeedbackCache::FeedbackCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // cold cache
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json entry;
        try {
            entry = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("feedback cache " + path_ + " line " + std::to_string(line_no) +
                             ": " + e.what());
        }
        Facet facet = parse_facet(entry.at("facet").get<std::string>());
        FacetVerdict verdict = make_verdict(facet, entry.at("class_label").get<std::string>());
        entries_[cache_key(entry.at("context_hash").get<uint64_t>(),
                           entry.at("response_hash").get<uint64_t>(), facet,
                           entry.at("prompt_version").get<std::string>(),
                           entry.at("judge_id").get<std::string>())] = verdict;
    }
}

std::optional<FacetVerdict> FeedbackCache::lookup(uint64_t ctx_hash, uint64_t resp_hash,
                                                  Facet facet, std::string_view prompt_version,
                                                  std::string_view judge_id) const {
    auto it = entries_.find(cache_key(ctx_hash, resp_hash, facet, prompt_version, judge_id));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void FeedbackCache::store(uint64_t ctx_hash, uint64_t resp_hash, Facet facet,
                          std::string_view prompt_version, std::string_view judge_id,
                          const FacetVerdict& verdict) {
    entries_[cache_key(ctx_hash, resp_hash, facet, prompt_version, judge_id)] = verdict;
    if (path_.empty()) return;
    json entry{{"context_hash", ctx_hash},
               {"response_hash", resp_hash},
               {"facet", std::string(facet_name(facet))},
               {"prompt_version", std::string(prompt_version)},
               {"judge_id", std::string(judge_id)},
               {"class_label", verdict.class_label},
               {"unhelpful", verdict.unhelpful}};
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw InputError("cannot append to feedback cache: " + path_);
    out << entry.dump() << '\n';
    out.flush();
}

std::vector<CoherenceTriple> synthesize_coherence_data(const Corpus& corpus, int n_base_pairs,
                                                       uint64_t seed) {
    if (corpus.size() < 2)
        throw ConfigError("coherence synthesis needs at least 2 conversations to swap across");
    if (n_base_pairs <= 0) throw ConfigError("n_base_pairs must be positive");

    struct Pair {
        size_t conv;
        std::string conv_id;
        std::vector<Turn> context;
        std::string response;
    };
    std::vector<Pair> pool;
    for (size_t c = 0; c < corpus.conversations.size(); ++c) {
        const Conversation& conv = corpus.conversations[c];
        for (size_t i = 1; i < conv.turns.size(); ++i) {
            if (conv.turns[i].role != Role::Supporter) continue;
            pool.push_back({c, conv.id,
                            std::vector<Turn>(conv.turns.begin(), conv.turns.begin() +
                                                                      static_cast<long>(i)),
                            conv.turns[i].text});
        }
    }
    if (pool.empty()) throw ConfigError("corpus has no usable context-response pairs");

    // corpus vocabulary for the substitution variant
    std::vector<std::string> vocabulary;
    {
        std::set<std::string> seen;
        for (const Conversation& conv : corpus.conversations)
            for (const Turn& turn : conv.turns)
                for (const std::string& word : tokenize_words(turn.text))
                    if (seen.insert(word).second) vocabulary.push_back(word);
        std::sort(vocabulary.begin(), vocabulary.end());
    }

    static const std::vector<std::string> kNegatable{"am", "is",  "are",    "was", "were",
                                                     "feel", "feels", "sounds", "can", "makes"};

    std::mt19937_64 rng(seed);
    std::vector<CoherenceTriple> triples;
    for (int b = 0; b < n_base_pairs; ++b) {
        const Pair& base = pool[static_cast<size_t>(rng() % pool.size())];
        triples.push_back(
            {base.context, base.response, true, "original", base.conv_id, base.conv_id});

        // swap: a supporter response from a different conversation
        size_t pick = static_cast<size_t>(rng() % pool.size());
        for (size_t guard = 0; pool[pick].conv == base.conv && guard < pool.size(); ++guard)
            pick = (pick + 1) % pool.size();
        if (pool[pick].conv == base.conv)
            throw ConfigError("cannot swap: all pairs come from one conversation");
        triples.push_back({base.context, pool[pick].response, false, "swap", base.conv_id,
                           pool[pick].conv_id});

        // perturb: negation insertion when possible, otherwise substitute the
        // longest content word with a different corpus word
        std::vector<std::string> words = tokenize_words(base.response);
        bool negated = false;
        for (size_t i = 0; i < words.size() && !negated; ++i) {
            if (std::find(kNegatable.begin(), kNegatable.end(), words[i]) != kNegatable.end()) {
                words.insert(words.begin() + static_cast<long>(i) + 1, "not");
                negated = true;
            }
        }
        if (!negated) {
            size_t target = 0;
            for (size_t i = 1; i < words.size(); ++i)
                if (words[i].size() > words[target].size()) target = i;
            std::string replacement = words[target];
            size_t at = static_cast<size_t>(rng() % vocabulary.size());
            for (size_t guard = 0; vocabulary[at] == words[target] && guard < vocabulary.size();
                 ++guard)
                at = (at + 1) % vocabulary.size();
            words[target] = vocabulary[at];
        }
        std::string perturbed;
        for (const std::string& word : words) {
            if (!perturbed.empty()) perturbed.push_back(' ');
            perturbed += word;
        }
        triples.push_back(
            {base.context, perturbed, false, "perturb", base.conv_id, base.conv_id});
    }
    return triples;
}

std::string serialize_coherence_triples(const std::vector<CoherenceTriple>& triples) {
    std::string out;
    for (const CoherenceTriple& triple : triples) {
        json turns = json::array();
        for (const Turn& turn : triple.context)
            turns.push_back({{"role", std::string(role_name(turn.role))}, {"text", turn.text}});
        json line{{"context", std::move(turns)},
                  {"response", triple.response},
                  {"label", triple.coherent ? "coherent" : "incoherent"},
                  {"variant", triple.variant}};
        out += line.dump();
        out += '\n';
    }
    return out;
}

}  // namespace esref
