#include "esref/model.hpp"

#include <cmath>
#include <random>

#include "esref/errors.hpp"

namespace esref {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
    double inner = kGeluC * (x + kGeluA * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_grad(double x) {
    double inner = kGeluC * (x + kGeluA * x * x * x);
    double t = std::tanh(inner);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// out[j] += sum_k in[k] * W[k][j]; W is rows x cols row-major. The k-major
// accumulation order is shared by every caller so teacher-forced and
// incremental paths produce identical bits.
void add_matvec(std::span<const double> in, const double* W, int rows, int cols, double* out) {
    for (int k = 0; k < rows; ++k) {
        double c = in[static_cast<size_t>(k)];
        const double* wrow = W + static_cast<ptrdiff_t>(k) * cols;
        for (int j = 0; j < cols; ++j) out[j] += c * wrow[j];
    }
}

// layer norm of one row; writes xhat and the normalized output
void layer_norm_row(std::span<const double> x, const double* gamma, const double* beta, int d,
                    double* xhat, double* out, double& mean, double& rstd) {
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += x[static_cast<size_t>(i)];
    m /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
        double c = x[static_cast<size_t>(i)] - m;
        var += c * c;
    }
    var /= d;
    double r = 1.0 / std::sqrt(var + kLnEps);
    for (int i = 0; i < d; ++i) {
        double h = (x[static_cast<size_t>(i)] - m) * r;
        xhat[i] = h;
        out[i] = gamma[i] * h + beta[i];
    }
    mean = m;
    rstd = r;
}

double uniform53(std::mt19937_64& rng) {
    return static_cast<double>((rng() >> 11) + 1) * (1.0 / 9007199254740993.0);
}

double normal_draw(std::mt19937_64& rng) {
    double u1 = uniform53(rng);
    double u2 = uniform53(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
    if (embedding_dim < 1 || head_count < 1 || layer_count < 0 || feedforward_dim < 1)
        throw ConfigError("model dimensions must be positive");
    if (embedding_dim % head_count != 0)
        throw ConfigError("embedding_dim must be divisible by head_count");
    if (max_sequence_len < 2) throw ConfigError("max_sequence_len must be at least 2");
}

namespace {

std::vector<ParamSegment> layout_segments(const ModelConfig& c) {
    std::vector<ParamSegment> segs;
    int64_t offset = 0;
    auto add = [&](std::string name, int64_t size) {
        segs.push_back({std::move(name), offset, size});
        offset += size;
    };
    const int64_t d = c.embedding_dim, f = c.feedforward_dim, v = c.vocab_size;
    add("tok_emb", v * d);
    add("pos_emb", static_cast<int64_t>(c.max_sequence_len) * d);
    for (int l = 0; l < c.layer_count; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        add(p + "ln1.gamma", d);
        add(p + "ln1.beta", d);
        add(p + "attn.w_qkv", d * 3 * d);
        add(p + "attn.b_qkv", 3 * d);
        add(p + "attn.w_out", d * d);
        add(p + "attn.b_out", d);
        add(p + "ln2.gamma", d);
        add(p + "ln2.beta", d);
        add(p + "ff.w1", d * f);
        add(p + "ff.b1", f);
        add(p + "ff.w2", f * d);
        add(p + "ff.b2", d);
    }
    add("lnf.gamma", d);
    add("lnf.beta", d);
    add("head.w", d * v);
    add("head.b", v);
    return segs;
}

}  // namespace

int64_t ModelConfig::param_count() const {
    auto segs = layout_segments(*this);
    return segs.back().offset + segs.back().size;
}

Model Model::init(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config_ = config;
    m.segments_ = layout_segments(config);
    m.params_.assign(static_cast<size_t>(config.param_count()), 0.0);

    std::mt19937_64 rng(config.seed);
    auto fill_normal = [&](std::span<double> w) {
        for (double& x : w) x = 0.02 * normal_draw(rng);
    };
    auto fill_ones = [&](std::span<double> w) {
        for (double& x : w) x = 1.0;
    };
    fill_normal(m.segment("tok_emb"));
    fill_normal(m.segment("pos_emb"));
    for (int l = 0; l < config.layer_count; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        fill_ones(m.segment(p + "ln1.gamma"));
        fill_normal(m.segment(p + "attn.w_qkv"));
        fill_normal(m.segment(p + "attn.w_out"));
        fill_ones(m.segment(p + "ln2.gamma"));
        fill_normal(m.segment(p + "ff.w1"));
        fill_normal(m.segment(p + "ff.w2"));
    }
    fill_ones(m.segment("lnf.gamma"));
    // head stays zero: constant logits until the first optimizer step
    return m;
}

Model assemble_model(ModelConfig config, std::vector<double> params) {
    config.validate();
    Model m;
    m.config_ = config;
    m.segments_ = layout_segments(config);
    if (static_cast<int64_t>(params.size()) != config.param_count())
        throw SchemaError("parameter array size does not match the model config");
    m.params_ = std::move(params);
    return m;
}

std::span<double> Model::segment(std::string_view name) {
    for (const ParamSegment& seg : segments_)
        if (seg.name == name)
            return std::span<double>(params_.data() + seg.offset, static_cast<size_t>(seg.size));
    throw SchemaError("unknown parameter segment '" + std::string(name) + "'");
}

namespace {

// read-only view of a segment without the mutable-access dance
const double* seg_ptr(const std::vector<ParamSegment>& segs, std::span<const double> params,
                      std::string_view name) {
    for (const ParamSegment& seg : segs)
        if (seg.name == name) return params.data() + seg.offset;
    throw SchemaError("unknown parameter segment '" + std::string(name) + "'");
}

}  // namespace

Model::Tape Model::forward(std::span<const int> x_ids, std::span<const int> y_ids) const {
    const int d = config_.embedding_dim;
    const int f = config_.feedforward_dim;
    const int H = config_.head_count;
    const int hd = d / H;
    const int V = config_.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (y_ids.empty()) throw SchemaError("response token sequence must be non-empty");
    const int T = static_cast<int>(x_ids.size() + y_ids.size());
    if (T > config_.max_sequence_len)
        throw SchemaError("sequence length " + std::to_string(T) + " exceeds max_sequence_len " +
                          std::to_string(config_.max_sequence_len));

    Tape tape;
    tape.ids.assign(x_ids.begin(), x_ids.end());
    tape.ids.insert(tape.ids.end(), y_ids.begin(), y_ids.end());
    tape.x_len = static_cast<int>(x_ids.size());
    tape.y_len = static_cast<int>(y_ids.size());
    for (int id : tape.ids)
        if (id < 0 || id >= V)
            throw SchemaError("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(V));

    const auto& segs = segments_;
    std::span<const double> P = params_;
    const double* tok_emb = seg_ptr(segs, P, "tok_emb");
    const double* pos_emb = seg_ptr(segs, P, "pos_emb");

    tape.embedded.resize(static_cast<size_t>(T) * d);
    for (int p = 0; p < T; ++p)
        for (int i = 0; i < d; ++i)
            tape.embedded[static_cast<size_t>(p) * d + i] =
                tok_emb[static_cast<size_t>(tape.ids[static_cast<size_t>(p)]) * d + i] +
                pos_emb[static_cast<size_t>(p) * d + i];

    std::vector<double> h = tape.embedded;  // current stream, T x d
    tape.layers.resize(static_cast<size_t>(config_.layer_count));
    std::vector<double> ln_out(static_cast<size_t>(T) * d);

    for (int l = 0; l < config_.layer_count; ++l) {
        LayerTape& lt = tape.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        const double* ln1_g = seg_ptr(segs, P, pre + "ln1.gamma");
        const double* ln1_b = seg_ptr(segs, P, pre + "ln1.beta");
        const double* w_qkv = seg_ptr(segs, P, pre + "attn.w_qkv");
        const double* b_qkv = seg_ptr(segs, P, pre + "attn.b_qkv");
        const double* w_out = seg_ptr(segs, P, pre + "attn.w_out");
        const double* b_out = seg_ptr(segs, P, pre + "attn.b_out");
        const double* ln2_g = seg_ptr(segs, P, pre + "ln2.gamma");
        const double* ln2_b = seg_ptr(segs, P, pre + "ln2.beta");
        const double* w1 = seg_ptr(segs, P, pre + "ff.w1");
        const double* b1 = seg_ptr(segs, P, pre + "ff.b1");
        const double* w2 = seg_ptr(segs, P, pre + "ff.w2");
        const double* b2 = seg_ptr(segs, P, pre + "ff.b2");

        lt.ln1_xhat.resize(static_cast<size_t>(T) * d);
        lt.ln1_mean.resize(static_cast<size_t>(T));
        lt.ln1_rstd.resize(static_cast<size_t>(T));
        for (int p = 0; p < T; ++p)
            layer_norm_row(std::span<const double>(h.data() + static_cast<size_t>(p) * d,
                                                   static_cast<size_t>(d)),
                           ln1_g, ln1_b, d, lt.ln1_xhat.data() + static_cast<size_t>(p) * d,
                           ln_out.data() + static_cast<size_t>(p) * d,
                           lt.ln1_mean[static_cast<size_t>(p)],
                           lt.ln1_rstd[static_cast<size_t>(p)]);

        lt.qkv.assign(static_cast<size_t>(T) * 3 * d, 0.0);
        for (int p = 0; p < T; ++p) {
            double* row = lt.qkv.data() + static_cast<size_t>(p) * 3 * d;
            for (int j = 0; j < 3 * d; ++j) row[j] = b_qkv[j];
            add_matvec(std::span<const double>(ln_out.data() + static_cast<size_t>(p) * d,
                                               static_cast<size_t>(d)),
                       w_qkv, d, 3 * d, row);
        }

        lt.att_weights.assign(static_cast<size_t>(H) * T * T, 0.0);
        lt.att_ctx.assign(static_cast<size_t>(T) * d, 0.0);
        std::vector<double> scores(static_cast<size_t>(T));
        for (int head = 0; head < H; ++head) {
            const int qo = head * hd, ko = d + head * hd, vo = 2 * d + head * hd;
            for (int p = 0; p < T; ++p) {
                const double* q = lt.qkv.data() + static_cast<size_t>(p) * 3 * d + qo;
                double maxs = -1e300;
                for (int j = 0; j <= p; ++j) {
                    const double* k = lt.qkv.data() + static_cast<size_t>(j) * 3 * d + ko;
                    double s = 0.0;
                    for (int u = 0; u < hd; ++u) s += q[u] * k[u];
                    s *= scale;
                    scores[static_cast<size_t>(j)] = s;
                    if (s > maxs) maxs = s;
                }
                double denom = 0.0;
                double* wrow =
                    lt.att_weights.data() + (static_cast<size_t>(head) * T + p) * T;
                for (int j = 0; j <= p; ++j) {
                    double e = std::exp(scores[static_cast<size_t>(j)] - maxs);
                    wrow[j] = e;
                    denom += e;
                }
                double inv = 1.0 / denom;
                double* ctx = lt.att_ctx.data() + static_cast<size_t>(p) * d + head * hd;
                for (int j = 0; j <= p; ++j) {
                    wrow[j] *= inv;
                    const double* v = lt.qkv.data() + static_cast<size_t>(j) * 3 * d + vo;
                    double w = wrow[j];
                    for (int u = 0; u < hd; ++u) ctx[u] += w * v[u];
                }
            }
        }

        lt.resid1.resize(static_cast<size_t>(T) * d);
        for (int p = 0; p < T; ++p) {
            double* out = lt.resid1.data() + static_cast<size_t>(p) * d;
            for (int i = 0; i < d; ++i) out[i] = b_out[i];
            add_matvec(std::span<const double>(lt.att_ctx.data() + static_cast<size_t>(p) * d,
                                               static_cast<size_t>(d)),
                       w_out, d, d, out);
            const double* res = h.data() + static_cast<size_t>(p) * d;
            for (int i = 0; i < d; ++i) out[i] += res[i];
        }

        lt.ln2_xhat.resize(static_cast<size_t>(T) * d);
        lt.ln2_mean.resize(static_cast<size_t>(T));
        lt.ln2_rstd.resize(static_cast<size_t>(T));
        for (int p = 0; p < T; ++p)
            layer_norm_row(std::span<const double>(lt.resid1.data() + static_cast<size_t>(p) * d,
                                                   static_cast<size_t>(d)),
                           ln2_g, ln2_b, d, lt.ln2_xhat.data() + static_cast<size_t>(p) * d,
                           ln_out.data() + static_cast<size_t>(p) * d,
                           lt.ln2_mean[static_cast<size_t>(p)],
                           lt.ln2_rstd[static_cast<size_t>(p)]);

        lt.ff_pre.assign(static_cast<size_t>(T) * f, 0.0);
        lt.ff_act.resize(static_cast<size_t>(T) * f);
        for (int p = 0; p < T; ++p) {
            double* u = lt.ff_pre.data() + static_cast<size_t>(p) * f;
            for (int j = 0; j < f; ++j) u[j] = b1[j];
            add_matvec(std::span<const double>(ln_out.data() + static_cast<size_t>(p) * d,
                                               static_cast<size_t>(d)),
                       w1, d, f, u);
            double* g = lt.ff_act.data() + static_cast<size_t>(p) * f;
            for (int j = 0; j < f; ++j) g[j] = gelu(u[j]);
        }

        lt.resid2.resize(static_cast<size_t>(T) * d);
        for (int p = 0; p < T; ++p) {
            double* out = lt.resid2.data() + static_cast<size_t>(p) * d;
            for (int i = 0; i < d; ++i) out[i] = b2[i];
            add_matvec(std::span<const double>(lt.ff_act.data() + static_cast<size_t>(p) * f,
                                               static_cast<size_t>(f)),
                       w2, f, d, out);
            const double* res = lt.resid1.data() + static_cast<size_t>(p) * d;
            for (int i = 0; i < d; ++i) out[i] += res[i];
        }
        h = lt.resid2;
    }

    const double* lnf_g = seg_ptr(segs, P, "lnf.gamma");
    const double* lnf_b = seg_ptr(segs, P, "lnf.beta");
    tape.lnf_xhat.resize(static_cast<size_t>(T) * d);
    tape.lnf_mean.resize(static_cast<size_t>(T));
    tape.lnf_rstd.resize(static_cast<size_t>(T));
    for (int p = 0; p < T; ++p)
        layer_norm_row(std::span<const double>(h.data() + static_cast<size_t>(p) * d,
                                               static_cast<size_t>(d)),
                       lnf_g, lnf_b, d, tape.lnf_xhat.data() + static_cast<size_t>(p) * d,
                       ln_out.data() + static_cast<size_t>(p) * d,
                       tape.lnf_mean[static_cast<size_t>(p)],
                       tape.lnf_rstd[static_cast<size_t>(p)]);

    const double* head_w = seg_ptr(segs, P, "head.w");
    const double* head_b = seg_ptr(segs, P, "head.b");
    tape.probs.assign(static_cast<size_t>(tape.y_len) * V, 0.0);
    tape.logprobs.resize(static_cast<size_t>(tape.y_len));
    std::vector<double> logits(static_cast<size_t>(V));
    for (int t = 0; t < tape.y_len; ++t) {
        const int p = tape.x_len - 1 + t;
        for (int v = 0; v < V; ++v) logits[static_cast<size_t>(v)] = head_b[v];
        add_matvec(std::span<const double>(ln_out.data() + static_cast<size_t>(p) * d,
                                           static_cast<size_t>(d)),
                   head_w, d, V, logits.data());
        double maxl = logits[0];
        for (int v = 1; v < V; ++v) maxl = std::max(maxl, logits[static_cast<size_t>(v)]);
        double denom = 0.0;
        for (int v = 0; v < V; ++v) denom += std::exp(logits[static_cast<size_t>(v)] - maxl);
        double log_denom = std::log(denom) + maxl;
        double* prow = tape.probs.data() + static_cast<size_t>(t) * V;
        for (int v = 0; v < V; ++v)
            prow[v] = std::exp(logits[static_cast<size_t>(v)] - log_denom);
        const int target = y_ids[static_cast<size_t>(t)];
        tape.logprobs[static_cast<size_t>(t)] = logits[static_cast<size_t>(target)] - log_denom;
    }
    return tape;
}

std::vector<double> Model::forward_logprobs(std::span<const int> x_ids,
                                            std::span<const int> y_ids) const {
    return forward(x_ids, y_ids).logprobs;
}

void Model::backward(const Tape& tape, std::span<const double> dlogprob,
                     std::vector<double>& grad) const {
    const int d = config_.embedding_dim;
    const int f = config_.feedforward_dim;
    const int H = config_.head_count;
    const int hd = d / H;
    const int V = config_.vocab_size;
    const int T = tape.x_len + tape.y_len;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    if (static_cast<int>(dlogprob.size()) != tape.y_len)
        throw SchemaError("dlogprob length must equal the scored token count");
    if (static_cast<int64_t>(grad.size()) != config_.param_count())
        throw SchemaError("gradient array size does not match the model");

    const auto& segs = segments_;
    std::span<const double> P = params_;
    auto gseg = [&](std::string_view name) -> double* {
        for (const ParamSegment& seg : segs)
            if (seg.name == name) return grad.data() + seg.offset;
        throw SchemaError("unknown parameter segment '" + std::string(name) + "'");
    };

    // ---- head and final layer norm ----
    const double* head_w = seg_ptr(segs, P, "head.w");
    const double* lnf_g = seg_ptr(segs, P, "lnf.gamma");
    double* d_head_w = gseg("head.w");
    double* d_head_b = gseg("head.b");
    double* d_lnf_g = gseg("lnf.gamma");
    double* d_lnf_b = gseg("lnf.beta");

    std::vector<double> d_stream(static_cast<size_t>(T) * d, 0.0);  // d(resid2 of last layer)
    std::vector<double> dlogits(static_cast<size_t>(V));
    std::vector<double> lnf_out_row(static_cast<size_t>(d));
    for (int t = 0; t < tape.y_len; ++t) {
        const double g = dlogprob[static_cast<size_t>(t)];
        if (g == 0.0) continue;
        const int p = tape.x_len - 1 + t;
        const int target = tape.ids[static_cast<size_t>(tape.x_len + t)];
        const double* prow = tape.probs.data() + static_cast<size_t>(t) * V;
        for (int v = 0; v < V; ++v) dlogits[static_cast<size_t>(v)] = -g * prow[v];
        dlogits[static_cast<size_t>(target)] += g;

        // reconstruct the ln_f output row from the tape
        const double* xhat = tape.lnf_xhat.data() + static_cast<size_t>(p) * d;
        const double* lnf_b = seg_ptr(segs, P, "lnf.beta");
        for (int i = 0; i < d; ++i) lnf_out_row[static_cast<size_t>(i)] = lnf_g[i] * xhat[i] + lnf_b[i];

        double* dz = d_stream.data() + static_cast<size_t>(p) * d;  // temp: d(lnf out)
        for (int k = 0; k < d; ++k) {
            const double* wrow = head_w + static_cast<ptrdiff_t>(k) * V;
            double acc = 0.0;
            for (int v = 0; v < V; ++v) {
                acc += dlogits[static_cast<size_t>(v)] * wrow[v];
            }
            dz[k] += acc;
            double* dwrow = d_head_w + static_cast<ptrdiff_t>(k) * V;
            double zk = lnf_out_row[static_cast<size_t>(k)];
            for (int v = 0; v < V; ++v) dwrow[v] += zk * dlogits[static_cast<size_t>(v)];
        }
        for (int v = 0; v < V; ++v) d_head_b[v] += dlogits[static_cast<size_t>(v)];
    }

    // layer norm backward shared by all three norms
    auto ln_backward_row = [d](const double* dout, const double* xhat, double rstd,
                               const double* gamma, double* dgamma, double* dbeta, double* dx) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int i = 0; i < d; ++i) {
            double dxh = dout[i] * gamma[i];
            mean_dxhat += dxh;
            mean_dxhat_xhat += dxh * xhat[i];
            dgamma[i] += dout[i] * xhat[i];
            dbeta[i] += dout[i];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        for (int i = 0; i < d; ++i) {
            double dxh = dout[i] * gamma[i];
            dx[i] += rstd * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    };

    // final layer norm: d_stream currently holds d(lnf out); convert in place
    {
        std::vector<double> d_in(static_cast<size_t>(T) * d, 0.0);
        for (int p = 0; p < T; ++p) {
            const double* dout = d_stream.data() + static_cast<size_t>(p) * d;
            ln_backward_row(dout, tape.lnf_xhat.data() + static_cast<size_t>(p) * d,
                            tape.lnf_rstd[static_cast<size_t>(p)], lnf_g, d_lnf_g, d_lnf_b,
                            d_in.data() + static_cast<size_t>(p) * d);
        }
        d_stream = std::move(d_in);
    }

    std::vector<double> ln_out(static_cast<size_t>(d));
    for (int l = config_.layer_count - 1; l >= 0; --l) {
        const LayerTape& lt = tape.layers[static_cast<size_t>(l)];
        const std::string pre = "layer" + std::to_string(l) + ".";
        const double* ln1_g = seg_ptr(segs, P, pre + "ln1.gamma");
        const double* ln1_b = seg_ptr(segs, P, pre + "ln1.beta");
        const double* w_qkv = seg_ptr(segs, P, pre + "attn.w_qkv");
        const double* w_out = seg_ptr(segs, P, pre + "attn.w_out");
        const double* ln2_g = seg_ptr(segs, P, pre + "ln2.gamma");
        const double* ln2_b = seg_ptr(segs, P, pre + "ln2.beta");
        const double* w1 = seg_ptr(segs, P, pre + "ff.w1");
        const double* w2 = seg_ptr(segs, P, pre + "ff.w2");
        double* d_ln1_g = gseg(pre + "ln1.gamma");
        double* d_ln1_b = gseg(pre + "ln1.beta");
        double* d_w_qkv = gseg(pre + "attn.w_qkv");
        double* d_b_qkv = gseg(pre + "attn.b_qkv");
        double* d_w_out = gseg(pre + "attn.w_out");
        double* d_b_out = gseg(pre + "attn.b_out");
        double* d_ln2_g = gseg(pre + "ln2.gamma");
        double* d_ln2_b = gseg(pre + "ln2.beta");
        double* d_w1 = gseg(pre + "ff.w1");
        double* d_b1 = gseg(pre + "ff.b1");
        double* d_w2 = gseg(pre + "ff.w2");
        double* d_b2 = gseg(pre + "ff.b2");

        // d_stream = d(resid2). Split into the ff branch and the resid1 skip.
        std::vector<double> d_resid1 = d_stream;  // skip connection
        std::vector<double> d_ln2_out(static_cast<size_t>(T) * d, 0.0);
        std::vector<double> d_act(static_cast<size_t>(f));
        for (int p = 0; p < T; ++p) {
            const double* dout = d_stream.data() + static_cast<size_t>(p) * d;
            const double* act = lt.ff_act.data() + static_cast<size_t>(p) * f;
            const double* ff_pre = lt.ff_pre.data() + static_cast<size_t>(p) * f;
            // through w2
            for (int j = 0; j < f; ++j) {
                const double* wrow = w2 + static_cast<ptrdiff_t>(j) * d;
                double acc = 0.0;
                for (int i = 0; i < d; ++i) acc += dout[i] * wrow[i];
                d_act[static_cast<size_t>(j)] = acc;
                double* dwrow = d_w2 + static_cast<ptrdiff_t>(j) * d;
                double aj = act[j];
                for (int i = 0; i < d; ++i) dwrow[i] += aj * dout[i];
            }
            for (int i = 0; i < d; ++i) d_b2[i] += dout[i];
            // through gelu and w1
            const double* xrow;
            {
                // recompute ln2 output row
                const double* xhat = lt.ln2_xhat.data() + static_cast<size_t>(p) * d;
                for (int i = 0; i < d; ++i)
                    ln_out[static_cast<size_t>(i)] = ln2_g[i] * xhat[i] + ln2_b[i];
                xrow = ln_out.data();
            }
            double* dln2 = d_ln2_out.data() + static_cast<size_t>(p) * d;
            for (int j = 0; j < f; ++j) {
                double du = d_act[static_cast<size_t>(j)] * gelu_grad(ff_pre[j]);
                d_b1[j] += du;
                for (int k = 0; k < d; ++k) {
                    d_w1[static_cast<ptrdiff_t>(k) * f + j] += xrow[k] * du;
                    dln2[k] += du * w1[static_cast<ptrdiff_t>(k) * f + j];
                }
            }
        }
        // ln2 backward into resid1
        for (int p = 0; p < T; ++p)
            ln_backward_row(d_ln2_out.data() + static_cast<size_t>(p) * d,
                            lt.ln2_xhat.data() + static_cast<size_t>(p) * d,
                            lt.ln2_rstd[static_cast<size_t>(p)], ln2_g, d_ln2_g, d_ln2_b,
                            d_resid1.data() + static_cast<size_t>(p) * d);

        // d_resid1 = d(h + att_proj): skip to the layer input plus attention
        std::vector<double> d_input = d_resid1;  // skip connection
        std::vector<double> d_ctx(static_cast<size_t>(T) * d, 0.0);
        for (int p = 0; p < T; ++p) {
            const double* dout = d_resid1.data() + static_cast<size_t>(p) * d;
            const double* ctx = lt.att_ctx.data() + static_cast<size_t>(p) * d;
            double* dctx = d_ctx.data() + static_cast<size_t>(p) * d;
            for (int k = 0; k < d; ++k) {
                const double* wrow = w_out + static_cast<ptrdiff_t>(k) * d;
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += dout[j] * wrow[j];
                dctx[k] += acc;
                double* dwrow = d_w_out + static_cast<ptrdiff_t>(k) * d;
                double ck = ctx[k];
                for (int j = 0; j < d; ++j) dwrow[j] += ck * dout[j];
            }
            for (int j = 0; j < d; ++j) d_b_out[j] += dout[j];
        }

        // attention core backward
        std::vector<double> d_qkv(static_cast<size_t>(T) * 3 * d, 0.0);
        std::vector<double> dw_row(static_cast<size_t>(T));
        for (int head = 0; head < H; ++head) {
            const int qo = head * hd, ko = d + head * hd, vo = 2 * d + head * hd;
            for (int p = 0; p < T; ++p) {
                const double* wrow =
                    lt.att_weights.data() + (static_cast<size_t>(head) * T + p) * T;
                const double* dctx = d_ctx.data() + static_cast<size_t>(p) * d + head * hd;
                // d(value) and d(att weight)
                double dot = 0.0;
                for (int j = 0; j <= p; ++j) {
                    const double* v = lt.qkv.data() + static_cast<size_t>(j) * 3 * d + vo;
                    double* dv = d_qkv.data() + static_cast<size_t>(j) * 3 * d + vo;
                    double acc = 0.0;
                    for (int u = 0; u < hd; ++u) {
                        acc += dctx[u] * v[u];
                        dv[u] += wrow[j] * dctx[u];
                    }
                    dw_row[static_cast<size_t>(j)] = acc;
                    dot += acc * wrow[j];
                }
                // softmax backward, then into q and k
                const double* q = lt.qkv.data() + static_cast<size_t>(p) * 3 * d + qo;
                double* dq = d_qkv.data() + static_cast<size_t>(p) * 3 * d + qo;
                for (int j = 0; j <= p; ++j) {
                    double ds = wrow[j] * (dw_row[static_cast<size_t>(j)] - dot) * scale;
                    if (ds == 0.0) continue;
                    const double* k = lt.qkv.data() + static_cast<size_t>(j) * 3 * d + ko;
                    double* dk = d_qkv.data() + static_cast<size_t>(j) * 3 * d + ko;
                    for (int u = 0; u < hd; ++u) {
                        dq[u] += ds * k[u];
                        dk[u] += ds * q[u];
                    }
                }
            }
        }

        // qkv projection backward into ln1 output, then ln1 into the input
        std::vector<double> d_ln1_out(static_cast<size_t>(T) * d, 0.0);
        for (int p = 0; p < T; ++p) {
            const double* dq = d_qkv.data() + static_cast<size_t>(p) * 3 * d;
            // recompute ln1 output row
            const double* xhat = lt.ln1_xhat.data() + static_cast<size_t>(p) * d;
            for (int i = 0; i < d; ++i)
                ln_out[static_cast<size_t>(i)] = ln1_g[i] * xhat[i] + ln1_b[i];
            double* dln1 = d_ln1_out.data() + static_cast<size_t>(p) * d;
            for (int k = 0; k < d; ++k) {
                const double* wrow = w_qkv + static_cast<ptrdiff_t>(k) * 3 * d;
                double* dwrow = d_w_qkv + static_cast<ptrdiff_t>(k) * 3 * d;
                double acc = 0.0;
                double xk = ln_out[static_cast<size_t>(k)];
                for (int j = 0; j < 3 * d; ++j) {
                    acc += dq[j] * wrow[j];
                    dwrow[j] += xk * dq[j];
                }
                dln1[k] += acc;
            }
            for (int j = 0; j < 3 * d; ++j) d_b_qkv[j] += dq[j];
        }
        for (int p = 0; p < T; ++p)
            ln_backward_row(d_ln1_out.data() + static_cast<size_t>(p) * d,
                            lt.ln1_xhat.data() + static_cast<size_t>(p) * d,
                            lt.ln1_rstd[static_cast<size_t>(p)], ln1_g, d_ln1_g, d_ln1_b,
                            d_input.data() + static_cast<size_t>(p) * d);

        d_stream = std::move(d_input);
    }

    // embeddings
    double* d_tok = gseg("tok_emb");
    double* d_pos = gseg("pos_emb");
    for (int p = 0; p < T; ++p) {
        const double* dh = d_stream.data() + static_cast<size_t>(p) * d;
        double* dt = d_tok + static_cast<ptrdiff_t>(tape.ids[static_cast<size_t>(p)]) * d;
        double* dp = d_pos + static_cast<ptrdiff_t>(p) * d;
        for (int i = 0; i < d; ++i) {
            dt[i] += dh[i];
            dp[i] += dh[i];
        }
    }
}

Model::DecodeState Model::begin_decode(std::span<const int> prefix) const {
    if (prefix.empty()) throw SchemaError("decode prefix must be non-empty");
    DecodeState state;
    state.keys.assign(static_cast<size_t>(config_.layer_count), {});
    state.values.assign(static_cast<size_t>(config_.layer_count), {});
    for (int id : prefix) feed_token(state, id);
    return state;
}

void Model::decode_step(DecodeState& state, int token_id) const {
    feed_token(state, token_id);
}

void Model::feed_token(DecodeState& state, int token_id) const {
    const int d = config_.embedding_dim;
    const int f = config_.feedforward_dim;
    const int H = config_.head_count;
    const int hd = d / H;
    const int V = config_.vocab_size;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const int p = state.position;

    if (token_id < 0 || token_id >= V)
        throw SchemaError("token id " + std::to_string(token_id) + " outside vocabulary");
    if (p >= config_.max_sequence_len)
        throw SchemaError("decode exceeded max_sequence_len");

    const auto& segs = segments_;
    std::span<const double> P = params_;
    const double* tok_emb = seg_ptr(segs, P, "tok_emb");
    const double* pos_emb = seg_ptr(segs, P, "pos_emb");

    std::vector<double> h(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
        h[static_cast<size_t>(i)] = tok_emb[static_cast<size_t>(token_id) * d + i] +
                                    pos_emb[static_cast<size_t>(p) * d + i];

    std::vector<double> ln_row(static_cast<size_t>(d));
    std::vector<double> xhat(static_cast<size_t>(d));
    std::vector<double> qkv(static_cast<size_t>(3) * d);
    std::vector<double> ctx(static_cast<size_t>(d));
    std::vector<double> weights(static_cast<size_t>(p) + 1);
    std::vector<double> ff(static_cast<size_t>(f));
    double mean, rstd;

    for (int l = 0; l < config_.layer_count; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        const double* ln1_g = seg_ptr(segs, P, pre + "ln1.gamma");
        const double* ln1_b = seg_ptr(segs, P, pre + "ln1.beta");
        const double* w_qkv = seg_ptr(segs, P, pre + "attn.w_qkv");
        const double* b_qkv = seg_ptr(segs, P, pre + "attn.b_qkv");
        const double* w_out = seg_ptr(segs, P, pre + "attn.w_out");
        const double* b_out = seg_ptr(segs, P, pre + "attn.b_out");
        const double* ln2_g = seg_ptr(segs, P, pre + "ln2.gamma");
        const double* ln2_b = seg_ptr(segs, P, pre + "ln2.beta");
        const double* w1 = seg_ptr(segs, P, pre + "ff.w1");
        const double* b1 = seg_ptr(segs, P, pre + "ff.b1");
        const double* w2 = seg_ptr(segs, P, pre + "ff.w2");
        const double* b2 = seg_ptr(segs, P, pre + "ff.b2");

        layer_norm_row(h, ln1_g, ln1_b, d, xhat.data(), ln_row.data(), mean, rstd);
        for (int j = 0; j < 3 * d; ++j) qkv[static_cast<size_t>(j)] = b_qkv[j];
        add_matvec(ln_row, w_qkv, d, 3 * d, qkv.data());

        std::vector<double>& kcache = state.keys[static_cast<size_t>(l)];
        std::vector<double>& vcache = state.values[static_cast<size_t>(l)];
        kcache.insert(kcache.end(), qkv.begin() + d, qkv.begin() + 2 * d);
        vcache.insert(vcache.end(), qkv.begin() + 2 * d, qkv.begin() + 3 * d);

        std::fill(ctx.begin(), ctx.end(), 0.0);
        for (int head = 0; head < H; ++head) {
            const double* q = qkv.data() + head * hd;
            double maxs = -1e300;
            for (int j = 0; j <= p; ++j) {
                const double* k = kcache.data() + static_cast<size_t>(j) * d + head * hd;
                double s = 0.0;
                for (int u = 0; u < hd; ++u) s += q[u] * k[u];
                s *= scale;
                weights[static_cast<size_t>(j)] = s;
                if (s > maxs) maxs = s;
            }
            double denom = 0.0;
            for (int j = 0; j <= p; ++j) {
                double e = std::exp(weights[static_cast<size_t>(j)] - maxs);
                weights[static_cast<size_t>(j)] = e;
                denom += e;
            }
            double inv = 1.0 / denom;
            double* c = ctx.data() + head * hd;
            for (int j = 0; j <= p; ++j) {
                double w = weights[static_cast<size_t>(j)] * inv;
                const double* v = vcache.data() + static_cast<size_t>(j) * d + head * hd;
                for (int u = 0; u < hd; ++u) c[u] += w * v[u];
            }
        }

        std::vector<double> resid1(static_cast<size_t>(d));
        for (int i = 0; i < d; ++i) resid1[static_cast<size_t>(i)] = b_out[i];
        add_matvec(ctx, w_out, d, d, resid1.data());
        for (int i = 0; i < d; ++i) resid1[static_cast<size_t>(i)] += h[static_cast<size_t>(i)];

        layer_norm_row(resid1, ln2_g, ln2_b, d, xhat.data(), ln_row.data(), mean, rstd);
        for (int j = 0; j < f; ++j) ff[static_cast<size_t>(j)] = b1[j];
        add_matvec(ln_row, w1, d, f, ff.data());
        for (int j = 0; j < f; ++j) ff[static_cast<size_t>(j)] = gelu(ff[static_cast<size_t>(j)]);

        for (int i = 0; i < d; ++i) h[static_cast<size_t>(i)] = b2[i];
        add_matvec(ff, w2, f, d, h.data());
        for (int i = 0; i < d; ++i) h[static_cast<size_t>(i)] += resid1[static_cast<size_t>(i)];
    }

    const double* lnf_g = seg_ptr(segs, P, "lnf.gamma");
    const double* lnf_b = seg_ptr(segs, P, "lnf.beta");
    layer_norm_row(h, lnf_g, lnf_b, d, xhat.data(), ln_row.data(), mean, rstd);

    const double* head_w = seg_ptr(segs, P, "head.w");
    const double* head_b = seg_ptr(segs, P, "head.b");
    state.next_logprobs.assign(static_cast<size_t>(V), 0.0);
    for (int v = 0; v < V; ++v) state.next_logprobs[static_cast<size_t>(v)] = head_b[v];
    add_matvec(ln_row, head_w, d, V, state.next_logprobs.data());
    double maxl = state.next_logprobs[0];
    for (int v = 1; v < V; ++v) maxl = std::max(maxl, state.next_logprobs[static_cast<size_t>(v)]);
    double denom = 0.0;
    for (int v = 0; v < V; ++v) denom += std::exp(state.next_logprobs[static_cast<size_t>(v)] - maxl);
    double log_denom = std::log(denom) + maxl;
    for (int v = 0; v < V; ++v) state.next_logprobs[static_cast<size_t>(v)] -= log_denom;

    state.position = p + 1;
}

}  // namespace esref
