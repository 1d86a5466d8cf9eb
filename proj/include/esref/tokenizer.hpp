#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "esref/corpus.hpp"

namespace esref {

// Word-level tokenizer over lowercased, whitespace-normalized text.
// Ids 0..5 are special tokens, word ids follow by descending corpus
// frequency with lexicographic tie-breaking.
class Tokenizer {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kSeeker = 4;
    static constexpr int kSupporter = 5;
    static constexpr int kNumSpecials = 6;

    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> words);

    int vocab_size() const { return static_cast<int>(entries_.size()); }
    const std::string& token(int id) const { return entries_.at(static_cast<size_t>(id)); }
    int word_count() const { return vocab_size() - kNumSpecials; }

    std::vector<int> encode(std::string_view text) const;  // OOV words map to kUnk
    std::string decode(std::span<const int> ids) const;    // specials render as markers

    // Model input prefix for one instance: [bos] then per turn a role marker
    // followed by the turn's word ids, ending with the supporter marker that
    // opens the response.
    std::vector<int> encode_context(const std::vector<Turn>& context_turns) const;
    // Response tokens followed by [eos]; this is the sequence the model is
    // scored and trained on.
    std::vector<int> encode_response(std::string_view text) const;

    uint64_t fingerprint() const;

    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

  private:
    std::vector<std::string> entries_;  // specials first, then words
    std::unordered_map<std::string, int> index_;
};

// Builds the vocabulary from every turn in the corpus.
// max_vocab caps the total entry count including specials.
Tokenizer fit_tokenizer(const Corpus& corpus, int max_vocab);

}  // namespace esref
