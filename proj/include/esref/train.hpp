#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "esref/corpus.hpp"
#include "esref/losses.hpp"
#include "esref/model.hpp"
#include "esref/tokenizer.hpp"

namespace esref {

struct EncodedInstance {
    std::string instance_id;
    std::vector<int> x_ids;  // [bos] context with role markers [supporter]
    std::vector<int> y_ids;  // gold words + [eos]
};

// Encodes instances for the model, truncating the oldest context tokens when
// [x; y] would exceed max_sequence_len. Instances whose response alone does
// not fit are dropped.
std::vector<EncodedInstance> encode_instances(const Tokenizer& tokenizer,
                                              const std::vector<TrainingInstance>& instances,
                                              int max_sequence_len);

struct AdamOptimizer {
    AdamOptimizer(size_t param_count, double learning_rate);
    void step(std::span<double> params, std::span<const double> grad);

    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<double> m, v;
};

struct TrainLogEntry {
    int step = 0;
    double l_cl = 0.0;
    double l_gen = 0.0;
    double total = 0.0;
    int n_helpful = 0;
    int n_unhelpful = 0;
};

struct TrainCurve {
    std::vector<TrainLogEntry> steps;
    std::vector<double> epoch_mean_l_gen;
    std::vector<double> epoch_mean_l_cl;
    std::vector<double> epoch_mean_total;
};

// Candidate sequences of one instance after annotation, deduplication, and
// exclusion of unlabeled candidates. May hold fewer than 2 entries, in which
// case the instance contributes only its generation loss.
struct ContrastSet {
    std::vector<std::vector<int>> token_ids;
    std::vector<int> labels;
};

using ContrastSets = std::unordered_map<std::string, ContrastSet>;

struct TrainOptions {
    double learning_rate = 3e-4;
    int epochs = 1;
    int batch_size = 8;
    uint64_t seed = 0;
    double beta_cl = 0.0;  // 0 disables the contrastive term entirely
    double beta_gen = 1.0;
    double lambda_margin = 0.01;
    double alpha_length_penalty = 1.0;
    PairNormalizer pair_normalizer = PairNormalizer::TwoK;
};

// The one training loop. Per batch the gradient of
//   sum over instances of beta_cl * L_cl(set) + beta_gen * L_gen(gold)
// is accumulated and one Adam step taken. Instance order reshuffles every
// epoch from a seed-determined stream. With beta_cl = 0, or when contrast
// sets are absent or single-label, the contrastive branch is skipped
// entirely, so an MLE run and a refinement run with beta_cl = 0 follow
// bit-identical trajectories. Candidate likelihoods are recomputed under the
// current parameters at every step. Throws on non-finite loss.
TrainCurve run_training(Model& model, const std::vector<EncodedInstance>& instances,
                        const TrainOptions& options, const ContrastSets* contrast_sets = nullptr);

// MLE base training: run_training without a contrastive term.
TrainCurve train_mle(Model& model, const std::vector<EncodedInstance>& instances,
                     double learning_rate, int epochs, int batch_size, uint64_t seed);

// Writes the per-step loss log as JSON-lines.
void write_loss_log(const std::string& path, const std::vector<TrainLogEntry>& steps);

}  // namespace esref
