#pragma once

#include <string>
#include <vector>

#include "esref/model.hpp"

namespace esref {

struct DecodeConfig {
    int K = 10;                       // candidates returned
    int group_count = 10;
    int beam_width_per_group = 1;
    double diversity_strength = 0.5;  // Hamming penalty weight
    int max_len = 32;                 // response tokens, terminator included
    double length_penalty = 1.0;      // alpha of the length-normalized score
    int end_token_id = 2;
    std::vector<int> banned_token_ids;  // never generated (specials other than eos)

    void validate(const ModelConfig& model_config) const;
};

struct Candidate {
    std::vector<int> token_ids;  // ends with end_token_id unless max_len was hit
    std::string text;            // filled by the sampling layer, not the decoder
    double model_score = 0.0;    // sum of token log-probs / len^length_penalty
    int group_index = 0;
};

struct DecodeOutput {
    std::vector<Candidate> candidates;  // sorted by model_score descending
    // True when the K returned sequences contain duplicates, i.e. the model
    // left the groups no distinct alternatives.
    bool duplicates_unavoidable = false;
};

// Stepwise argmax; ties break toward the lowest token id.
Candidate greedy(const Model& model, std::span<const int> x_ids, int max_len,
                 int end_token_id = 2, std::span<const int> banned = {});

Candidate beam_search(const Model& model, std::span<const int> x_ids, int width, int max_len,
                      double length_penalty, int end_token_id = 2,
                      std::span<const int> banned = {});

// Group-sequential diverse beam search with Hamming diversity: while group g
// selects its tokens at step t, each token's score is its log-probability
// minus diversity_strength times the number of times earlier groups chose
// that token at step t. Returns exactly K candidates.
DecodeOutput diverse_beam_search(const Model& model, std::span<const int> x_ids,
                                 const DecodeConfig& config);

}  // namespace esref
