#include "esref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/text.hpp"

namespace esref {

using nlohmann::json;

namespace {

void check_aligned(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references) {
    if (candidates.size() != references.size())
        throw SchemaError("candidate and reference lists must align");
    if (candidates.empty()) throw SchemaError("metric inputs must be non-empty");
}

using Ngram = std::vector<std::string>;

std::map<Ngram, long> ngram_counts(const std::vector<std::string>& words, int n) {
    std::map<Ngram, long> counts;
    if (static_cast<int>(words.size()) < n) return counts;
    for (size_t i = 0; i + static_cast<size_t>(n) <= words.size(); ++i)
        ++counts[Ngram(words.begin() + static_cast<long>(i),
                       words.begin() + static_cast<long>(i + static_cast<size_t>(n)))];
    return counts;
}

}  // namespace

double bleu_n(const std::vector<std::string>& candidates,
              const std::vector<std::string>& references, int n) {
    check_aligned(candidates, references);
    if (n < 1 || n > 4) throw ConfigError("BLEU order must be in 1..4");

    long cand_len = 0, ref_len = 0;
    std::vector<long> clipped(static_cast<size_t>(n), 0), total(static_cast<size_t>(n), 0);
    for (size_t i = 0; i < candidates.size(); ++i) {
        std::vector<std::string> cand = tokenize_words(candidates[i]);
        std::vector<std::string> ref = tokenize_words(references[i]);
        cand_len += static_cast<long>(cand.size());
        ref_len += static_cast<long>(ref.size());
        for (int k = 1; k <= n; ++k) {
            std::map<Ngram, long> cc = ngram_counts(cand, k);
            std::map<Ngram, long> rc = ngram_counts(ref, k);
            for (const auto& [gram, count] : cc) {
                total[static_cast<size_t>(k - 1)] += count;
                auto it = rc.find(gram);
                if (it != rc.end())
                    clipped[static_cast<size_t>(k - 1)] += std::min(count, it->second);
            }
        }
    }

    double log_precision_sum = 0.0;
    for (int k = 1; k <= n; ++k) {
        if (total[static_cast<size_t>(k - 1)] == 0) return 0.0;
        double num = static_cast<double>(clipped[static_cast<size_t>(k - 1)]);
        if (num == 0.0) {
            if (k == 1) return 0.0;      // no unigram overlap: score is genuinely 0
            num = 1e-9;                  // epsilon smoothing for higher orders
        }
        log_precision_sum += std::log(num / static_cast<double>(total[static_cast<size_t>(k - 1)]));
    }
    double brevity = 1.0;
    if (cand_len == 0) return 0.0;
    if (cand_len < ref_len)
        brevity = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
    return 100.0 * brevity * std::exp(log_precision_sum / n);
}

namespace {

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references) {
    check_aligned(candidates, references);
    double sum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        std::vector<std::string> cand = tokenize_words(candidates[i]);
        std::vector<std::string> ref = tokenize_words(references[i]);
        if (cand.empty() || ref.empty()) continue;
        double lcs = static_cast<double>(lcs_length(cand, ref));
        if (lcs == 0.0) continue;
        double p = lcs / static_cast<double>(cand.size());
        double r = lcs / static_cast<double>(ref.size());
        sum += 2.0 * p * r / (p + r);
    }
    return 100.0 * sum / static_cast<double>(candidates.size());
}

namespace {

// crude suffix stripper, enough for a stem backoff
std::string stem(const std::string& word) {
    auto strip = [&word](std::string_view suffix) -> std::optional<std::string> {
        if (word.size() > suffix.size() + 2 &&
            word.compare(word.size() - suffix.size(), suffix.size(), suffix) == 0)
            return word.substr(0, word.size() - suffix.size());
        return std::nullopt;
    };
    for (std::string_view suffix : {"ing", "ed", "es", "ly", "s"})
        if (auto stripped = strip(suffix)) return *stripped;
    return word;
}

struct MeteorMatch {
    size_t cand_pos;
    size_t ref_pos;
};

}  // namespace

double meteor_lite(const std::vector<std::string>& candidates,
                   const std::vector<std::string>& references) {
    check_aligned(candidates, references);
    double sum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        std::vector<std::string> cand = tokenize_words(candidates[i]);
        std::vector<std::string> ref = tokenize_words(references[i]);
        if (cand.empty() || ref.empty()) continue;

        std::vector<bool> cand_used(cand.size(), false), ref_used(ref.size(), false);
        std::vector<MeteorMatch> matches;
        // exact stage, then stem backoff on the leftovers
        for (int stage = 0; stage < 2; ++stage) {
            for (size_t c = 0; c < cand.size(); ++c) {
                if (cand_used[c]) continue;
                for (size_t r = 0; r < ref.size(); ++r) {
                    if (ref_used[r]) continue;
                    bool hit = stage == 0 ? cand[c] == ref[r] : stem(cand[c]) == stem(ref[r]);
                    if (!hit) continue;
                    cand_used[c] = true;
                    ref_used[r] = true;
                    matches.push_back({c, r});
                    break;
                }
            }
        }
        if (matches.empty()) continue;
        std::sort(matches.begin(), matches.end(),
                  [](const MeteorMatch& a, const MeteorMatch& b) { return a.cand_pos < b.cand_pos; });
        size_t chunks = 1;
        for (size_t m = 1; m < matches.size(); ++m)
            if (matches[m].cand_pos != matches[m - 1].cand_pos + 1 ||
                matches[m].ref_pos != matches[m - 1].ref_pos + 1)
                ++chunks;

        double m_count = static_cast<double>(matches.size());
        double p = m_count / static_cast<double>(cand.size());
        double r = m_count / static_cast<double>(ref.size());
        double fmean = 10.0 * p * r / (r + 9.0 * p);
        double penalty =
            chunks == 1 ? 0.0 : 0.5 * std::pow(static_cast<double>(chunks) / m_count, 3.0);
        sum += fmean * (1.0 - penalty);
    }
    return 100.0 * sum / static_cast<double>(candidates.size());
}

double cider(const std::vector<std::string>& candidates,
             const std::vector<std::string>& references) {
    check_aligned(candidates, references);
    const int max_n = 4;
    const double N = static_cast<double>(references.size());

    // document frequencies over the reference corpus
    std::vector<std::map<Ngram, long>> df(static_cast<size_t>(max_n));
    for (const std::string& ref : references) {
        std::vector<std::string> words = tokenize_words(ref);
        for (int n = 1; n <= max_n; ++n)
            for (const auto& [gram, count] : ngram_counts(words, n)) ++df[static_cast<size_t>(n - 1)][gram];
    }
    auto idf = [&](int n, const Ngram& gram) {
        auto it = df[static_cast<size_t>(n - 1)].find(gram);
        double freq = it == df[static_cast<size_t>(n - 1)].end() ? 0.0 : static_cast<double>(it->second);
        return std::log(N) - std::log(std::max(freq, 1.0));
    };

    double total = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        std::vector<std::string> cand = tokenize_words(candidates[i]);
        std::vector<std::string> ref = tokenize_words(references[i]);
        double pair_score = 0.0;
        for (int n = 1; n <= max_n; ++n) {
            std::map<Ngram, long> cc = ngram_counts(cand, n);
            std::map<Ngram, long> rc = ngram_counts(ref, n);
            double dot = 0.0, cnorm = 0.0, rnorm = 0.0;
            for (const auto& [gram, count] : cc) {
                double w = static_cast<double>(count) * idf(n, gram);
                cnorm += w * w;
                auto it = rc.find(gram);
                if (it != rc.end())
                    dot += w * static_cast<double>(it->second) * idf(n, gram);
            }
            for (const auto& [gram, count] : rc) {
                double w = static_cast<double>(count) * idf(n, gram);
                rnorm += w * w;
            }
            if (cnorm > 0.0 && rnorm > 0.0)
                pair_score += dot / (std::sqrt(cnorm) * std::sqrt(rnorm));
        }
        total += pair_score / max_n;
    }
    return 10.0 * total / static_cast<double>(candidates.size());
}

EmbeddingTable load_embedding_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open embedding file: " + path);
    EmbeddingTable table;
    std::string line;
    size_t dim = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string token;
        fields >> token;
        std::vector<double> vec;
        double v;
        while (fields >> v) vec.push_back(v);
        if (vec.empty()) throw ParseError("embedding line without values: " + token);
        if (dim == 0) dim = vec.size();
        if (vec.size() != dim) throw ParseError("inconsistent embedding dimension at " + token);
        table[normalize_text(token)] = std::move(vec);
    }
    if (table.empty()) throw ParseError("embedding file is empty: " + path);
    return table;
}

namespace {

std::vector<double> extrema_pool(const std::vector<std::string>& words,
                                 const EmbeddingTable& table, size_t dim) {
    std::vector<double> pooled(dim, 0.0);
    for (const std::string& word : words) {
        auto it = table.find(word);
        if (it == table.end()) continue;
        for (size_t d = 0; d < dim; ++d)
            if (std::abs(it->second[d]) > std::abs(pooled[d])) pooled[d] = it->second[d];
    }
    return pooled;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double extrema(const std::vector<std::string>& candidates,
               const std::vector<std::string>& references, const EmbeddingTable& table) {
    check_aligned(candidates, references);
    if (table.empty()) throw ConfigError("extrema requires a non-empty embedding table");
    const size_t dim = table.begin()->second.size();
    double sum = 0.0;
    for (size_t i = 0; i < candidates.size(); ++i)
        sum += cosine(extrema_pool(tokenize_words(candidates[i]), table, dim),
                      extrema_pool(tokenize_words(references[i]), table, dim));
    return 100.0 * sum / static_cast<double>(candidates.size());
}

MetricReport score_all(const std::vector<std::string>& candidates,
                       const std::vector<std::string>& references, const EmbeddingTable* table) {
    MetricReport report;
    report.corpus_size = static_cast<int>(candidates.size());
    for (int n = 1; n <= 4; ++n)
        report.values["B-" + std::to_string(n)] = bleu_n(candidates, references, n);
    report.values["R-L"] = rouge_l(candidates, references);
    report.values["METEOR-lite"] = meteor_lite(candidates, references);
    report.values["CIDEr"] = cider(candidates, references);
    if (table) report.values["Extrema"] = extrema(candidates, references, *table);
    return report;
}

HelpfulnessReport helpful_percentage(const Model& model,
                                     const std::vector<TrainingInstance>& instances,
                                     const Tokenizer& tokenizer, Judge& judge,
                                     HelpfulnessMode mode, const DecodeConfig& decode_config,
                                     FeedbackCache* cache, std::string_view prompt_version) {
    if (instances.empty()) throw ConfigError("helpful_percentage requires instances");
    HelpfulnessReport report;
    report.mode = mode;
    std::map<Facet, long> helpful_by_facet;
    long aggregate_helpful = 0;

    FeedbackCache local_cache;
    FeedbackCache& effective_cache = cache ? *cache : local_cache;
    const std::string judge_id = judge.id();

    std::vector<EncodedInstance> encoded =
        encode_instances(tokenizer, instances, model.config().max_sequence_len);
    std::map<std::string, const TrainingInstance*> by_id;
    for (const TrainingInstance& inst : instances) by_id[inst.instance_id] = &inst;

    for (const EncodedInstance& enc : encoded) {
        std::vector<std::string> responses;
        if (mode == HelpfulnessMode::SingleResponse) {
            Candidate cand = greedy(model, enc.x_ids, decode_config.max_len,
                                    decode_config.end_token_id, decode_config.banned_token_ids);
            std::vector<int> words;
            for (int id : cand.token_ids)
                if (id >= Tokenizer::kNumSpecials) words.push_back(id);
            responses.push_back(tokenizer.decode(words));
        } else {
            DecodeOutput decoded = diverse_beam_search(model, enc.x_ids, decode_config);
            for (const Candidate& cand : decoded.candidates) {
                std::vector<int> words;
                for (int id : cand.token_ids)
                    if (id >= Tokenizer::kNumSpecials) words.push_back(id);
                responses.push_back(tokenizer.decode(words));
            }
        }

        const std::vector<Turn>& context = by_id.at(enc.instance_id)->context_turns;
        const uint64_t ctx_hash = context_hash(context);
        for (const std::string& response : responses) {
            if (response.empty()) {
                ++report.judge_failures;
                continue;
            }
            const uint64_t resp_hash = response_hash(response);
            std::vector<FacetVerdict> verdicts;
            bool failed = false;
            for (Facet facet : kAllFacets) {
                if (auto hit = effective_cache.lookup(ctx_hash, resp_hash, facet, prompt_version,
                                                      judge_id)) {
                    verdicts.push_back(*hit);
                    continue;
                }
                try {
                    FacetVerdict verdict = judge.classify(context, response, facet);
                    effective_cache.store(ctx_hash, resp_hash, facet, prompt_version, judge_id,
                                          verdict);
                    verdicts.push_back(std::move(verdict));
                } catch (const AnnotationError&) {
                    failed = true;
                    break;
                }
            }
            if (failed) {
                ++report.judge_failures;
                continue;
            }
            ++report.responses_judged;
            for (const FacetVerdict& v : verdicts)
                if (!v.unhelpful) ++helpful_by_facet[v.facet];
            aggregate_helpful += aggregate(verdicts);
        }
    }

    if (report.responses_judged == 0) throw SchemaError("no response could be judged");
    const double denom = static_cast<double>(report.responses_judged);
    report.facet_percent["emp."] = 100.0 * static_cast<double>(helpful_by_facet[Facet::Empathy]) / denom;
    report.facet_percent["skill"] = 100.0 * static_cast<double>(helpful_by_facet[Facet::Skill]) / denom;
    report.facet_percent["cohr."] =
        100.0 * static_cast<double>(helpful_by_facet[Facet::Coherence]) / denom;
    report.aggregate_percent = 100.0 * static_cast<double>(aggregate_helpful) / denom;
    return report;
}

double paired_bootstrap(std::span<const double> scores_a, std::span<const double> scores_b,
                        int resamples, uint64_t seed) {
    if (scores_a.size() != scores_b.size())
        throw SchemaError("paired_bootstrap requires aligned score vectors");
    if (scores_a.empty()) throw SchemaError("paired_bootstrap requires scores");
    if (resamples < 1000) throw ConfigError("paired_bootstrap requires at least 1000 resamples");

    const size_t n = scores_a.size();
    std::vector<double> diff(n);
    for (size_t i = 0; i < n; ++i) diff[i] = scores_a[i] - scores_b[i];

    std::mt19937_64 rng(seed);
    long le = 0, ge = 0;
    for (int r = 0; r < resamples; ++r) {
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += diff[rng() % n];
        mean /= static_cast<double>(n);
        if (mean <= 0.0) ++le;
        if (mean >= 0.0) ++ge;
    }
    const double denom = static_cast<double>(resamples) + 1.0;
    double p = 2.0 * std::min((static_cast<double>(le) + 1.0) / denom,
                              (static_cast<double>(ge) + 1.0) / denom);
    return std::min(1.0, p);
}

std::string metrics_to_json(const MetricReport& metrics,
                            const std::optional<HelpfulnessReport>& helpfulness,
                            const std::map<std::string, double>& significance,
                            const std::string& config_echo) {
    json doc;
    doc["metrics"] = metrics.values;
    doc["corpus_size"] = metrics.corpus_size;
    if (helpfulness) {
        json h;
        h["mode"] = helpfulness->mode == HelpfulnessMode::SingleResponse ? "single_response"
                                                                         : "ten_responses";
        h["facets"] = helpfulness->facet_percent;
        h["agg."] = helpfulness->aggregate_percent;
        h["responses_judged"] = helpfulness->responses_judged;
        h["judge_failures"] = helpfulness->judge_failures;
        doc["helpfulness"] = std::move(h);
    }
    doc["significance"] = significance;
    doc["config"] = config_echo;
    return doc.dump(2) + "\n";
}

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string render_metric_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
    static const std::vector<std::string> cols{"B-1",  "B-2",        "B-3",   "B-4",
                                               "R-L",  "METEOR-lite", "CIDEr", "Extrema"};
    std::ostringstream out;
    out << "Model";
    for (const std::string& c : cols) out << '\t' << c;
    out << '\n';
    for (const auto& [name, report] : rows) {
        out << name;
        for (const std::string& c : cols) {
            auto it = report.values.find(c);
            out << '\t' << (it == report.values.end() ? "-" : fixed2(it->second));
        }
        out << '\n';
    }
    return out.str();
}

std::string render_helpfulness_table(
    const std::vector<std::pair<std::string, HelpfulnessReport>>& rows) {
    std::ostringstream out;
    out << "Model\temp.\tskill\tcohr.\tagg.\n";
    for (const auto& [name, report] : rows) {
        out << name << '\t' << fixed2(report.facet_percent.at("emp.")) << '\t'
            << fixed2(report.facet_percent.at("skill")) << '\t'
            << fixed2(report.facet_percent.at("cohr.")) << '\t'
            << fixed2(report.aggregate_percent) << '\n';
    }
    return out.str();
}

}  // namespace esref
