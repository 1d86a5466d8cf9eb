#include "esref/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "esref/errors.hpp"

namespace esref {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'E', 'S', 'R', 'F'};

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("checkpoint truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size},
                {"embedding_dim", c.embedding_dim},
                {"layer_count", c.layer_count},
                {"head_count", c.head_count},
                {"max_sequence_len", c.max_sequence_len},
                {"feedforward_dim", c.feedforward_dim},
                {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    c.layer_count = j.at("layer_count").get<int>();
    c.head_count = j.at("head_count").get<int>();
    c.max_sequence_len = j.at("max_sequence_len").get<int>();
    c.feedforward_dim = j.at("feedforward_dim").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     uint64_t tokenizer_fingerprint) {
    json segments = json::array();
    for (const ParamSegment& seg : model.segments())
        segments.push_back({{"name", seg.name}, {"offset", seg.offset}, {"size", seg.size}});
    json header{{"config", config_to_json(model.config())},
                {"tokenizer_fingerprint", tokenizer_fingerprint},
                {"dtype", "f64"},
                {"param_count", model.params().size()},
                {"segments", std::move(segments)}};
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (double x : model.params()) put_u64(out, std::bit_cast<uint64_t>(x));
    if (!out) throw InputError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path,
                                 std::optional<uint64_t> expect_fingerprint) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("not a checkpoint file: " + path);
    uint32_t version = get_u32(in);
    if (version != kCheckpointVersion)
        throw SchemaError("checkpoint format version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    uint64_t header_len = get_u64(in);
    if (header_len > (1u << 20)) throw ParseError("checkpoint header implausibly large");
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len)))
        throw ParseError("checkpoint truncated in header");
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("checkpoint header is not JSON: ") + e.what());
    }
    if (header.value("dtype", "") != "f64") throw SchemaError("unsupported checkpoint dtype");

    ModelConfig config = config_from_json(header.at("config"));
    config.validate();
    const uint64_t count = header.at("param_count").get<uint64_t>();
    if (count != static_cast<uint64_t>(config.param_count()))
        throw SchemaError("checkpoint parameter count does not match its config");

    std::vector<double> params(count);
    for (uint64_t i = 0; i < count; ++i) {
        params[i] = std::bit_cast<double>(get_u64(in));
        if (!std::isfinite(params[i]))
            throw SchemaError("checkpoint contains a non-finite parameter");
    }

    LoadedCheckpoint loaded;
    loaded.tokenizer_fingerprint = header.at("tokenizer_fingerprint").get<uint64_t>();
    if (expect_fingerprint && *expect_fingerprint != loaded.tokenizer_fingerprint)
        throw SchemaError("checkpoint tokenizer fingerprint mismatch");
    loaded.model = assemble_model(config, std::move(params));
    return loaded;
}

}  // namespace esref
