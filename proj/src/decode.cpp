#include "esref/decode.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "esref/errors.hpp"

namespace esref {

void DecodeConfig::validate(const ModelConfig& model_config) const {
    if (K < 1 || group_count < 1 || beam_width_per_group < 1)
        throw ConfigError("decode sizes must be positive");
    if (K > group_count * beam_width_per_group)
        throw ConfigError("K must not exceed group_count * beam_width_per_group");
    if (diversity_strength < 0.0) throw ConfigError("diversity_strength must be >= 0");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    if (max_len > model_config.max_sequence_len)
        throw ConfigError("max_len exceeds the model's max_sequence_len");
    if (end_token_id < 0 || end_token_id >= model_config.vocab_size)
        throw ConfigError("end_token_id outside the vocabulary");
}

namespace {

struct Hypothesis {
    std::vector<int> tokens;
    Model::DecodeState state;
    double cum_raw = 0.0;  // plain sum of token log-probs, the re-scorable part
    double cum_sel = 0.0;  // selection objective: cum_raw minus diversity penalties
};

struct Finished {
    std::vector<int> tokens;
    double model_score = 0.0;
    int group_index = 0;
};

double finished_score(double cum_raw, size_t len, double length_penalty) {
    // identical arithmetic to length_normalized_logprob on the re-scored tokens
    return cum_raw / std::pow(static_cast<double>(len), length_penalty);
}

int allowed_steps(const Model& model, size_t prefix_len, int max_len) {
    int room = model.config().max_sequence_len - static_cast<int>(prefix_len);
    if (room < 1) throw SchemaError("context leaves no room to generate a response");
    return std::min(max_len, room);
}

bool is_banned(int token, std::span<const int> banned) {
    return std::find(banned.begin(), banned.end(), token) != banned.end();
}

// One step of one group's beam. step_counts carries how often each token was
// already chosen at this time step by earlier groups; chosen tokens are added
// to it so later groups see them.
void advance_group(const Model& model, std::vector<Hypothesis>& live,
                   std::vector<Finished>& finished, int group_index, int width, int steps_allowed,
                   int end_token_id, std::span<const int> banned, double length_penalty,
                   double diversity_strength, std::map<int, int>* step_counts) {
    if (live.empty()) return;
    struct Expansion {
        size_t parent;
        int token;
        double sel_score;
        double raw_logprob;
    };
    std::vector<Expansion> expansions;
    const int vocab = model.config().vocab_size;
    for (size_t h = 0; h < live.size(); ++h) {
        const std::vector<double>& lp = live[h].state.next_logprobs;
        for (int v = 0; v < vocab; ++v) {
            if (is_banned(v, banned)) continue;
            double penalty = 0.0;
            if (step_counts && diversity_strength > 0.0) {
                auto it = step_counts->find(v);
                if (it != step_counts->end())
                    penalty = diversity_strength * static_cast<double>(it->second);
            }
            expansions.push_back(
                {h, v, live[h].cum_sel + lp[static_cast<size_t>(v)] - penalty,
                 lp[static_cast<size_t>(v)]});
        }
    }
    std::sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
        if (a.sel_score != b.sel_score) return a.sel_score > b.sel_score;
        if (a.token != b.token) return a.token < b.token;
        return a.parent < b.parent;
    });

    std::vector<Hypothesis> next_live;
    int taken = 0;
    for (const Expansion& e : expansions) {
        if (taken >= width) break;
        ++taken;
        const Hypothesis& parent = live[e.parent];
        Hypothesis child;
        child.tokens = parent.tokens;
        child.tokens.push_back(e.token);
        child.cum_raw = parent.cum_raw + e.raw_logprob;
        child.cum_sel = e.sel_score;
        if (step_counts) ++(*step_counts)[e.token];

        bool done = e.token == end_token_id ||
                    static_cast<int>(child.tokens.size()) >= steps_allowed;
        if (done) {
            finished.push_back({child.tokens,
                                finished_score(child.cum_raw, child.tokens.size(), length_penalty),
                                group_index});
            continue;
        }
        child.state = parent.state;
        model.decode_step(child.state, e.token);
        next_live.push_back(std::move(child));
    }
    live = std::move(next_live);
}

}  // namespace

Candidate greedy(const Model& model, std::span<const int> x_ids, int max_len, int end_token_id,
                 std::span<const int> banned) {
    if (max_len < 1) throw ConfigError("max_len must be positive");
    const int steps = allowed_steps(model, x_ids.size(), max_len);
    Model::DecodeState state = model.begin_decode(x_ids);
    Candidate cand;
    double cum = 0.0;
    for (int t = 0; t < steps; ++t) {
        const std::vector<double>& lp = state.next_logprobs;
        int best = -1;
        for (int v = 0; v < model.config().vocab_size; ++v) {
            if (is_banned(v, banned)) continue;
            if (best < 0 || lp[static_cast<size_t>(v)] > lp[static_cast<size_t>(best)]) best = v;
        }
        if (best < 0) throw ConfigError("every token is banned");
        cum += lp[static_cast<size_t>(best)];
        cand.token_ids.push_back(best);
        if (best == end_token_id) break;
        if (t + 1 < steps) model.decode_step(state, best);
    }
    cand.model_score = finished_score(cum, cand.token_ids.size(), 1.0);
    cand.group_index = 0;
    return cand;
}

Candidate beam_search(const Model& model, std::span<const int> x_ids, int width, int max_len,
                      double length_penalty, int end_token_id, std::span<const int> banned) {
    if (width < 1) throw ConfigError("beam width must be >= 1");
    if (max_len < 1) throw ConfigError("max_len must be positive");
    const int steps = allowed_steps(model, x_ids.size(), max_len);

    std::vector<Hypothesis> live(1);
    live[0].state = model.begin_decode(x_ids);
    std::vector<Finished> finished;
    for (int t = 0; t < steps && !live.empty(); ++t)
        advance_group(model, live, finished, 0, width, steps, end_token_id, banned,
                      length_penalty, 0.0, nullptr);

    if (finished.empty()) throw SchemaError("beam search produced no finished hypothesis");
    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i)
        if (finished[i].model_score > finished[best].model_score) best = i;
    Candidate cand;
    cand.token_ids = finished[best].tokens;
    cand.model_score = finished[best].model_score;
    cand.group_index = 0;
    return cand;
}

DecodeOutput diverse_beam_search(const Model& model, std::span<const int> x_ids,
                                 const DecodeConfig& config) {
    config.validate(model.config());
    const int steps = allowed_steps(model, x_ids.size(), config.max_len);
    const Model::DecodeState base_state = model.begin_decode(x_ids);

    std::vector<std::vector<Hypothesis>> live(static_cast<size_t>(config.group_count));
    std::vector<std::vector<Finished>> finished(static_cast<size_t>(config.group_count));
    for (auto& group : live) {
        group.resize(1);
        group[0].state = base_state;
    }

    for (int t = 0; t < steps; ++t) {
        bool any_live = false;
        std::map<int, int> step_counts;
        for (int g = 0; g < config.group_count; ++g) {
            advance_group(model, live[static_cast<size_t>(g)], finished[static_cast<size_t>(g)],
                          g, config.beam_width_per_group, steps, config.end_token_id,
                          config.banned_token_ids, config.length_penalty,
                          config.diversity_strength, &step_counts);
            any_live |= !live[static_cast<size_t>(g)].empty();
        }
        if (!any_live) break;
    }

    for (auto& group : finished)
        std::stable_sort(group.begin(), group.end(), [](const Finished& a, const Finished& b) {
            return a.model_score > b.model_score;
        });

    // Group-major selection: first the best distinct hypothesis of each group
    // in turn, then remaining distinct ones; duplicates only when the groups
    // offer nothing else.
    DecodeOutput out;
    std::set<std::vector<int>> seen;
    std::vector<std::vector<bool>> taken(static_cast<size_t>(config.group_count));
    for (int g = 0; g < config.group_count; ++g)
        taken[static_cast<size_t>(g)].assign(finished[static_cast<size_t>(g)].size(), false);
    auto take = [&](const Finished& f) {
        Candidate cand;
        cand.token_ids = f.tokens;
        cand.model_score = f.model_score;
        cand.group_index = f.group_index;
        out.candidates.push_back(std::move(cand));
    };
    // phase 1: distinct sequences, group-major so every group is represented
    bool progress = true;
    while (static_cast<int>(out.candidates.size()) < config.K && progress) {
        progress = false;
        for (int g = 0; g < config.group_count && static_cast<int>(out.candidates.size()) < config.K;
             ++g) {
            auto& pool = finished[static_cast<size_t>(g)];
            for (size_t i = 0; i < pool.size(); ++i) {
                if (taken[static_cast<size_t>(g)][i] || seen.count(pool[i].tokens)) continue;
                taken[static_cast<size_t>(g)][i] = true;
                seen.insert(pool[i].tokens);
                take(pool[i]);
                progress = true;
                break;
            }
        }
    }
    // phase 2: the groups offer no more distinct sequences; pad with their
    // best untaken hypotheses and flag the duplication
    while (static_cast<int>(out.candidates.size()) < config.K) {
        out.duplicates_unavoidable = true;
        bool padded = false;
        for (int g = 0; g < config.group_count && static_cast<int>(out.candidates.size()) < config.K;
             ++g) {
            auto& pool = finished[static_cast<size_t>(g)];
            for (size_t i = 0; i < pool.size(); ++i) {
                if (taken[static_cast<size_t>(g)][i]) continue;
                taken[static_cast<size_t>(g)][i] = true;
                take(pool[i]);
                padded = true;
                break;
            }
        }
        if (!padded) break;  // fewer than K finished hypotheses exist at all
    }

    std::stable_sort(out.candidates.begin(), out.candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                         return a.model_score > b.model_score;
                     });
    return out;
}

}  // namespace esref
