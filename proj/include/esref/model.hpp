#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace esref {

struct ModelConfig {
    int vocab_size = 0;
    int embedding_dim = 32;
    int layer_count = 2;
    int head_count = 2;
    int max_sequence_len = 128;
    int feedforward_dim = 64;
    uint64_t seed = 0;

    void validate() const;
    int64_t param_count() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ParamSegment {
    std::string name;
    int64_t offset = 0;
    int64_t size = 0;
};

// Decoder-only transformer over [context tokens; response tokens] with causal
// masking. Computation is double precision throughout; parameters live in one
// flat array split into named segments (the checkpoint layout).
class Model {
  public:
    Model() = default;

    // Seeded initialization. Embeddings and projection weights draw from
    // N(0, 0.02) via a hand-rolled Box-Muller so the stream is stable across
    // standard libraries; layer-norm gains are 1; biases and the output head
    // start at zero, which makes the initial next-token distribution exactly
    // uniform.
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    const std::vector<ParamSegment>& segments() const { return segments_; }
    std::span<double> segment(std::string_view name);

    // Everything a backward pass needs from one teacher-forced pass.
    struct LayerTape {
        std::vector<double> ln1_xhat, ln1_mean, ln1_rstd;
        std::vector<double> qkv;          // T x 3d
        std::vector<double> att_weights;  // H x T x T, rows softmaxed over j <= p
        std::vector<double> att_ctx;      // T x d
        std::vector<double> resid1;       // T x d
        std::vector<double> ln2_xhat, ln2_mean, ln2_rstd;
        std::vector<double> ff_pre;  // T x f
        std::vector<double> ff_act;  // T x f
        std::vector<double> resid2;  // T x d
    };
    struct Tape {
        std::vector<int> ids;  // x followed by y
        int x_len = 0, y_len = 0;
        std::vector<double> embedded;  // T x d
        std::vector<LayerTape> layers;
        std::vector<double> lnf_xhat, lnf_mean, lnf_rstd;
        std::vector<double> probs;     // y_len x V, softmax rows at scored positions
        std::vector<double> logprobs;  // y_len, log G(y_t | x, y_<t)
    };

    // Teacher-forced pass scoring y given x. Position t of the result is the
    // log-probability of y[t] given x and y[..t). Throws on ids outside the
    // vocabulary or when |x|+|y| exceeds max_sequence_len.
    Tape forward(std::span<const int> x_ids, std::span<const int> y_ids) const;
    std::vector<double> forward_logprobs(std::span<const int> x_ids,
                                         std::span<const int> y_ids) const;

    // Accumulates d(loss)/d(params) into grad (size param_count) given
    // d(loss)/d(logprob_t) for each scored position.
    void backward(const Tape& tape, std::span<const double> dlogprob,
                  std::vector<double>& grad) const;

    // Incremental decoding with per-layer key/value caches. The per-row
    // arithmetic matches forward() exactly, so scores accumulated while
    // decoding equal a teacher-forced re-score of the emitted tokens.
    struct DecodeState {
        std::vector<std::vector<double>> keys;    // per layer, rows appended
        std::vector<std::vector<double>> values;  // per layer
        int position = 0;                         // tokens consumed so far
        std::vector<double> next_logprobs;        // V, log-softmax after last token
    };
    DecodeState begin_decode(std::span<const int> prefix) const;
    void decode_step(DecodeState& state, int token_id) const;

  private:
    void feed_token(DecodeState& state, int token_id) const;

    ModelConfig config_;
    std::vector<double> params_;
    std::vector<ParamSegment> segments_;

    friend Model assemble_model(ModelConfig config, std::vector<double> params);
};

// Builds a model from a config and an existing parameter array (checkpoint
// loading). Throws when the array size does not match the config.
Model assemble_model(ModelConfig config, std::vector<double> params);

}  // namespace esref
