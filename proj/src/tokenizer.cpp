#include "esref/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/text.hpp"

namespace esref {

using nlohmann::json;

namespace {

const char* kSpecialNames[Tokenizer::kNumSpecials] = {"<pad>", "<s>",      "</s>",
                                                      "<unk>", "<seeker>", "<supporter>"};

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> words) {
    entries_.assign(kSpecialNames, kSpecialNames + kNumSpecials);
    entries_.insert(entries_.end(), words.begin(), words.end());
    for (int i = 0; i < static_cast<int>(entries_.size()); ++i) {
        auto [it, fresh] = index_.emplace(entries_[static_cast<size_t>(i)], i);
        if (!fresh) throw SchemaError("duplicate vocabulary entry '" + it->first + "'");
    }
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> ids;
    for (const std::string& word : tokenize_words(text)) {
        auto it = index_.find(word);
        ids.push_back(it == index_.end() ? kUnk : it->second);
    }
    return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) throw SchemaError("token id out of range");
        if (!out.empty()) out.push_back(' ');
        out += entries_[static_cast<size_t>(id)];
    }
    return out;
}

std::vector<int> Tokenizer::encode_context(const std::vector<Turn>& context_turns) const {
    std::vector<int> ids{kBos};
    for (const Turn& turn : context_turns) {
        ids.push_back(turn.role == Role::Seeker ? kSeeker : kSupporter);
        std::vector<int> words = encode(turn.text);
        ids.insert(ids.end(), words.begin(), words.end());
    }
    ids.push_back(kSupporter);
    return ids;
}

std::vector<int> Tokenizer::encode_response(std::string_view text) const {
    std::vector<int> ids = encode(text);
    ids.push_back(kEos);
    return ids;
}

uint64_t Tokenizer::fingerprint() const {
    uint64_t state = fnv1a64("tokenizer/v1");
    for (const std::string& entry : entries_) {
        state = fnv1a64(entry, state);
        state = fnv1a64("\x1f", state);
    }
    return state;
}

void Tokenizer::save(const std::string& path) const {
    json specials;
    for (int i = 0; i < kNumSpecials; ++i) specials[kSpecialNames[i]] = i;
    json doc{{"specials", specials},
             {"vocab", std::vector<std::string>(entries_.begin() + kNumSpecials, entries_.end())}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write tokenizer file: " + path);
    out << doc.dump(2) << '\n';
}

Tokenizer Tokenizer::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open tokenizer file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ParseError("tokenizer file " + path + ": " + e.what());
    }
    if (!doc.contains("specials") || !doc.contains("vocab"))
        throw SchemaError("tokenizer file missing 'specials' or 'vocab'");
    for (int i = 0; i < kNumSpecials; ++i) {
        const char* name = kSpecialNames[i];
        if (!doc["specials"].contains(name) || doc["specials"][name].get<int>() != i)
            throw SchemaError(std::string("tokenizer special '") + name + "' missing or misplaced");
    }
    return Tokenizer(doc["vocab"].get<std::vector<std::string>>());
}

Tokenizer fit_tokenizer(const Corpus& corpus, int max_vocab) {
    if (corpus.empty()) throw ConfigError("cannot fit tokenizer on an empty corpus");
    if (max_vocab < Tokenizer::kNumSpecials + 1)
        throw ConfigError("max_vocab must allow at least one word beyond the specials");

    // std::map keeps words ordered so frequency ties break lexicographically.
    std::map<std::string, long> freq;
    for (const Conversation& conv : corpus.conversations)
        for (const Turn& turn : conv.turns)
            for (const std::string& word : tokenize_words(turn.text)) ++freq[word];

    std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    const size_t budget = static_cast<size_t>(max_vocab - Tokenizer::kNumSpecials);
    std::vector<std::string> words;
    for (const auto& [word, count] : ranked) {
        if (words.size() == budget) break;
        words.push_back(word);
    }
    return Tokenizer(std::move(words));
}

}  // namespace esref
