#include "esref/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/text.hpp"

namespace esref {

using nlohmann::json;

std::string_view role_name(Role role) {
    return role == Role::Seeker ? "seeker" : "supporter";
}

Role parse_role(std::string_view name) {
    if (name == "seeker") return Role::Seeker;
    if (name == "supporter") return Role::Supporter;
    throw SchemaError("unknown role '" + std::string(name) + "'");
}

void SplitSpec::validate() const {
    double sum = 0.0;
    for (double r : ratios) {
        if (r < 0.0) throw ConfigError("split ratios must be non-negative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

namespace {

Conversation conversation_from_json(const json& object, size_t line_no) {
    const std::string where = "line " + std::to_string(line_no);
    if (!object.is_object() || !object.contains("id") || !object.contains("turns"))
        throw SchemaError(where + ": expected object with 'id' and 'turns'");
    Conversation conv;
    conv.id = object.at("id").get<std::string>();
    if (conv.id.empty()) throw SchemaError(where + ": empty conversation id");

    bool seeker_seen = false;
    bool supported = false;
    for (const json& jt : object.at("turns")) {
        Turn turn;
        try {
            turn.role = parse_role(jt.at("role").get<std::string>());
        } catch (const SchemaError& e) {
            throw SchemaError(where + ": " + e.what());
        }
        turn.text = jt.at("text").get<std::string>();
        if (normalize_text(turn.text).empty())
            throw SchemaError(where + ": turn text empty after normalization");
        if (jt.contains("strategy") && !jt.at("strategy").is_null())
            turn.strategy = jt.at("strategy").get<std::string>();
        if (turn.role == Role::Seeker) seeker_seen = true;
        if (turn.role == Role::Supporter && seeker_seen) supported = true;
        conv.turns.push_back(std::move(turn));
    }
    if (!supported)
        throw SchemaError(where + ": conversation '" + conv.id +
                          "' has no supporter turn preceded by a seeker turn");
    return conv;
}

}  // namespace

Corpus parse_corpus(std::istream& stream) {
    Corpus corpus;
    std::unordered_set<std::string> ids;
    std::string line;
    size_t line_no = 0;
    while (std::getline(stream, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json object;
        try {
            object = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        Conversation conv = conversation_from_json(object, line_no);
        if (!ids.insert(conv.id).second)
            throw SchemaError("line " + std::to_string(line_no) + ": duplicate conversation id '" +
                              conv.id + "'");
        corpus.conversations.push_back(std::move(conv));
    }
    return corpus;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus file: " + path);
    return parse_corpus(in);
}

std::string serialize_corpus(const Corpus& corpus) {
    std::string out;
    for (const Conversation& conv : corpus.conversations) {
        json turns = json::array();
        for (const Turn& turn : conv.turns) {
            json jt{{"role", std::string(role_name(turn.role))}, {"text", turn.text}};
            if (!turn.strategy.empty()) jt["strategy"] = turn.strategy;
            turns.push_back(std::move(jt));
        }
        json object{{"id", conv.id}, {"turns", std::move(turns)}};
        out += object.dump();
        out += '\n';
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write corpus file: " + path);
    out << serialize_corpus(corpus);
}

std::vector<TrainingInstance> build_instances(const Corpus& corpus, int max_context_turns) {
    if (max_context_turns <= 0) throw ConfigError("max_context_turns must be positive");
    std::vector<TrainingInstance> instances;
    for (const Conversation& conv : corpus.conversations) {
        for (size_t i = 0; i < conv.turns.size(); ++i) {
            if (conv.turns[i].role != Role::Supporter || i == 0) continue;
            TrainingInstance inst;
            inst.instance_id = conv.id + "#" + std::to_string(i);
            size_t window = std::min<size_t>(i, static_cast<size_t>(max_context_turns));
            inst.context_turns.assign(conv.turns.begin() + static_cast<long>(i - window),
                                      conv.turns.begin() + static_cast<long>(i));
            inst.gold_response = conv.turns[i];
            instances.push_back(std::move(inst));
        }
    }
    return instances;
}

SplitResult split_corpus(const Corpus& corpus, const SplitSpec& spec) {
    spec.validate();
    const size_t n = corpus.size();
    if (n < 3) throw ConfigError("corpus must contain at least 3 conversations to split");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(spec.seed);
    // Fisher-Yates with explicit draws so the permutation is stable across
    // standard-library implementations.
    for (size_t i = n - 1; i > 0; --i) {
        size_t j = static_cast<size_t>(rng() % (i + 1));
        std::swap(order[i], order[j]);
    }

    // Largest-remainder apportionment keeps each part within one conversation
    // of its exact share.
    std::array<size_t, 3> counts{};
    std::array<double, 3> remainders{};
    size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        double exact = spec.ratios[k] * static_cast<double>(n);
        counts[k] = static_cast<size_t>(std::floor(exact));
        remainders[k] = exact - std::floor(exact);
        assigned += counts[k];
    }
    while (assigned < n) {
        int best = 0;
        for (int k = 1; k < 3; ++k)
            if (remainders[k] > remainders[best]) best = k;
        ++counts[best];
        remainders[best] = -1.0;
        ++assigned;
    }

    SplitResult result;
    size_t cursor = 0;
    Corpus* parts[3] = {&result.train, &result.valid, &result.test};
    for (int k = 0; k < 3; ++k) {
        std::vector<size_t> member(order.begin() + static_cast<long>(cursor),
                                   order.begin() + static_cast<long>(cursor + counts[k]));
        cursor += counts[k];
        // Preserve corpus order within each part.
        std::sort(member.begin(), member.end());
        for (size_t idx : member) parts[k]->conversations.push_back(corpus.conversations[idx]);
    }
    return result;
}

}  // namespace esref
