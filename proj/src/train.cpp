#include "esref/train.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "esref/errors.hpp"

namespace esref {

std::vector<EncodedInstance> encode_instances(const Tokenizer& tokenizer,
                                              const std::vector<TrainingInstance>& instances,
                                              int max_sequence_len) {
    std::vector<EncodedInstance> encoded;
    encoded.reserve(instances.size());
    for (const TrainingInstance& inst : instances) {
        EncodedInstance e;
        e.instance_id = inst.instance_id;
        e.x_ids = tokenizer.encode_context(inst.context_turns);
        e.y_ids = tokenizer.encode_response(inst.gold_response.text);
        const size_t budget = static_cast<size_t>(max_sequence_len);
        if (e.y_ids.size() + 2 > budget) continue;  // response alone cannot fit
        if (e.x_ids.size() + e.y_ids.size() > budget) {
            // keep [bos] and the most recent context tokens
            size_t keep = budget - e.y_ids.size() - 1;
            std::vector<int> trimmed{Tokenizer::kBos};
            trimmed.insert(trimmed.end(), e.x_ids.end() - static_cast<long>(keep), e.x_ids.end());
            e.x_ids = std::move(trimmed);
        }
        encoded.push_back(std::move(e));
    }
    return encoded;
}

AdamOptimizer::AdamOptimizer(size_t param_count, double learning_rate)
    : lr(learning_rate), m(param_count, 0.0), v(param_count, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

TrainCurve run_training(Model& model, const std::vector<EncodedInstance>& instances,
                        const TrainOptions& options, const ContrastSets* contrast_sets) {
    if (instances.empty()) throw ConfigError("training requires at least one instance");
    if (options.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (options.epochs < 0) throw ConfigError("epochs must be >= 0");

    TrainCurve curve;
    if (options.epochs == 0) return curve;

    const size_t n = instances.size();
    const size_t param_count = model.params().size();
    AdamOptimizer adam(param_count, options.learning_rate);
    std::vector<double> grad(param_count, 0.0);
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(options.seed);
    int step = 0;

    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

        double epoch_lgen = 0.0, epoch_lcl = 0.0, epoch_total = 0.0;
        size_t epoch_batches = 0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(options.batch_size)) {
            const size_t stop = std::min(n, start + static_cast<size_t>(options.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            TrainLogEntry entry;
            entry.step = ++step;

            for (size_t b = start; b < stop; ++b) {
                const EncodedInstance& inst = instances[order[b]];

                Model::Tape tape = model.forward(inst.x_ids, inst.y_ids);
                const double lgen = nll_loss(tape.logprobs);
                entry.l_gen += lgen;
                if (options.beta_gen != 0.0) {
                    std::vector<double> dlp(tape.logprobs.size(),
                                            -options.beta_gen /
                                                static_cast<double>(tape.logprobs.size()));
                    model.backward(tape, dlp, grad);
                }

                if (options.beta_cl == 0.0 || !contrast_sets) continue;
                auto found = contrast_sets->find(inst.instance_id);
                if (found == contrast_sets->end()) continue;
                const ContrastSet& set = found->second;
                if (set.token_ids.size() < 2) continue;
                int helpful = 0;
                for (int l : set.labels) helpful += l;
                entry.n_helpful += helpful;
                entry.n_unhelpful += static_cast<int>(set.labels.size()) - helpful;
                if (helpful == 0 || helpful == static_cast<int>(set.labels.size()))
                    continue;  // single-label set: generation loss only

                std::vector<Model::Tape> tapes;
                tapes.reserve(set.token_ids.size());
                std::vector<double> P(set.token_ids.size());
                for (size_t c = 0; c < set.token_ids.size(); ++c) {
                    tapes.push_back(model.forward(inst.x_ids, set.token_ids[c]));
                    P[c] = length_normalized_logprob(tapes.back().logprobs,
                                                     options.alpha_length_penalty);
                }
                const double lcl = contrastive_loss(P, set.labels, options.lambda_margin,
                                                    options.pair_normalizer);
                entry.l_cl += lcl;
                std::vector<double> dP = contrastive_loss_grad(
                    P, set.labels, options.lambda_margin, options.pair_normalizer);
                for (size_t c = 0; c < set.token_ids.size(); ++c) {
                    if (dP[c] == 0.0) continue;
                    const double len = static_cast<double>(set.token_ids[c].size());
                    const double scale = options.beta_cl * dP[c] /
                                         std::pow(len, options.alpha_length_penalty);
                    std::vector<double> dlp(set.token_ids[c].size(), scale);
                    model.backward(tapes[c], dlp, grad);
                }
            }

            entry.total = options.beta_cl * entry.l_cl + options.beta_gen * entry.l_gen;
            if (!std::isfinite(entry.total))
                throw SchemaError("training diverged: non-finite loss at step " +
                                  std::to_string(entry.step));
            adam.step(model.params(), grad);
            epoch_lgen += entry.l_gen;
            epoch_lcl += entry.l_cl;
            epoch_total += entry.total;
            ++epoch_batches;
            curve.steps.push_back(entry);
        }
        curve.epoch_mean_l_gen.push_back(epoch_lgen / static_cast<double>(epoch_batches));
        curve.epoch_mean_l_cl.push_back(epoch_lcl / static_cast<double>(epoch_batches));
        curve.epoch_mean_total.push_back(epoch_total / static_cast<double>(epoch_batches));
    }
    return curve;
}

TrainCurve train_mle(Model& model, const std::vector<EncodedInstance>& instances,
                     double learning_rate, int epochs, int batch_size, uint64_t seed) {
    TrainOptions options;
    options.learning_rate = learning_rate;
    options.epochs = epochs;
    options.batch_size = batch_size;
    options.seed = seed;
    options.beta_cl = 0.0;
    options.beta_gen = 1.0;
    return run_training(model, instances, options, nullptr);
}

void write_loss_log(const std::string& path, const std::vector<TrainLogEntry>& steps) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write loss log: " + path);
    for (const TrainLogEntry& e : steps) {
        nlohmann::json line{{"step", e.step},        {"l_cl", e.l_cl},
                            {"l_gen", e.l_gen},      {"total", e.total},
                            {"n_helpful", e.n_helpful}, {"n_unhelpful", e.n_unhelpful}};
        out << line.dump() << '\n';
    }
}

}  // namespace esref
