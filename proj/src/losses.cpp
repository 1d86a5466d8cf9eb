#include "esref/losses.hpp"

#include <cmath>
#include <string>

#include "esref/errors.hpp"

namespace esref {

void Hyperparams::validate() const {
    if (lambda_margin < 0.0) throw ConfigError("lambda_margin must be >= 0");
    if (beta_cl < 0.0 || beta_gen < 0.0) throw ConfigError("beta weights must be >= 0");
    if (K < 1) throw ConfigError("K must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (rounds < 1) throw ConfigError("rounds must be positive");
}

double length_normalized_logprob(std::span<const double> token_logprobs, double alpha) {
    if (token_logprobs.empty())
        throw SchemaError("length_normalized_logprob needs a non-empty sequence");
    double sum = 0.0;
    for (double v : token_logprobs) sum += v;
    double len = static_cast<double>(token_logprobs.size());
    return sum / std::pow(len, alpha);
}

namespace {

double pair_norm(size_t k, PairNormalizer normalizer) {
    if (normalizer == PairNormalizer::TwoK) return 2.0 * static_cast<double>(k);
    return static_cast<double>(k) * static_cast<double>(k - 1);
}

void check_cl_inputs(std::span<const double> P, std::span<const int> labels) {
    if (P.size() != labels.size())
        throw SchemaError("contrastive_loss: P and labels must align");
    if (P.size() < 2) throw SchemaError("contrastive_loss needs at least 2 candidates");
    for (int l : labels)
        if (l != 0 && l != 1) throw SchemaError("labels must be 0 or 1");
}

}  // namespace

double contrastive_loss(std::span<const double> P, std::span<const int> labels, double lambda,
                        PairNormalizer normalizer) {
    check_cl_inputs(P, labels);
    const size_t k = P.size();
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) {
            if (i == j || labels[i] == labels[j]) continue;
            double arg = -static_cast<double>(labels[i] - labels[j]) * (P[i] - P[j] + lambda);
            if (arg > 0.0) sum += arg;
        }
    }
    return sum / pair_norm(k, normalizer);
}

std::vector<double> contrastive_loss_grad(std::span<const double> P, std::span<const int> labels,
                                          double lambda, PairNormalizer normalizer) {
    check_cl_inputs(P, labels);
    const size_t k = P.size();
    const double norm = pair_norm(k, normalizer);
    std::vector<double> grad(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) {
            if (i == j || labels[i] == labels[j]) continue;
            double sign = static_cast<double>(labels[i] - labels[j]);
            double arg = -sign * (P[i] - P[j] + lambda);
            if (arg > 0.0) {  // strict: subgradient 0 at the kink
                grad[i] += -sign / norm;
                grad[j] += sign / norm;
            }
        }
    }
    return grad;
}

double nll_loss(std::span<const double> gold_token_logprobs) {
    if (gold_token_logprobs.empty()) throw SchemaError("nll_loss needs a non-empty sequence");
    double sum = 0.0;
    for (double v : gold_token_logprobs) sum += v;
    return -sum / static_cast<double>(gold_token_logprobs.size());
}

double total_loss(double l_cl, double l_gen, double beta_cl, double beta_gen) {
    if (!std::isfinite(l_cl) || !std::isfinite(l_gen))
        throw SchemaError("total_loss requires finite components");
    return beta_cl * l_cl + beta_gen * l_gen;
}

}  // namespace esref
