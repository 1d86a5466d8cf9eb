#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace esref {

enum class PairNormalizer { TwoK, PairCount };

struct Hyperparams {
    double lambda_margin = 0.01;
    double alpha_length_penalty = 1.0;
    double beta_cl = 1.0;
    double beta_gen = 1.0;
    int K = 10;
    double learning_rate = 3e-5;
    int epochs = 1;
    int batch_size = 1;
    uint64_t seed = 0;
    int rounds = 1;  // re-sample candidates this many times; 1 = one pass
    PairNormalizer pair_normalizer = PairNormalizer::TwoK;

    void validate() const;
};

struct LossBreakdown {
    double l_cl = 0.0;
    double l_gen = 0.0;
    double total = 0.0;
    std::vector<double> per_candidate_P;
};

// sum_t values[t] / len^alpha
double length_normalized_logprob(std::span<const double> token_logprobs, double alpha);

// (1/norm) * sum_i sum_{j != i} max(0, -(l_i - l_j) * (P_i - P_j + lambda)),
// norm = 2K by default. Zero exactly when every (helpful, unhelpful) pair
// satisfies P_helpful >= P_unhelpful + lambda; same-label pairs never
// contribute.
double contrastive_loss(std::span<const double> P, std::span<const int> labels, double lambda,
                        PairNormalizer normalizer = PairNormalizer::TwoK);

// d(contrastive_loss)/dP. Subgradient 0 at hinge kinks.
std::vector<double> contrastive_loss_grad(std::span<const double> P, std::span<const int> labels,
                                          double lambda,
                                          PairNormalizer normalizer = PairNormalizer::TwoK);

// -(1/|y|) sum_t values[t]
double nll_loss(std::span<const double> gold_token_logprobs);

double total_loss(double l_cl, double l_gen, double beta_cl, double beta_gen);

}  // namespace esref
