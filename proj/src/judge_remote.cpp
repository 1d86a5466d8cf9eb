#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "esref/errors.hpp"
#include "esref/feedback.hpp"

namespace esref {

using nlohmann::json;

namespace {

// Splits "http://host:port/path" into client base and request path.
struct EndpointParts {
    std::string base;
    std::string path;
};

EndpointParts split_endpoint(const std::string& endpoint) {
    size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("judge endpoint must include a scheme: " + endpoint);
    size_t path_start = endpoint.find('/', scheme + 3);
    if (path_start == std::string::npos) return {endpoint, "/"};
    return {endpoint.substr(0, path_start), endpoint.substr(path_start)};
}

std::string extract_text_field(const json& reply) {
    if (reply.contains("text") && reply["text"].is_string())
        return reply["text"].get<std::string>();
    if (reply.contains("content") && reply["content"].is_string())
        return reply["content"].get<std::string>();
    if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
        const json& first = reply["choices"][0];
        if (first.contains("message") && first["message"].contains("content"))
            return first["message"]["content"].get<std::string>();
        if (first.contains("text") && first["text"].is_string())
            return first["text"].get<std::string>();
    }
    throw AnnotationError("judge reply has no text field: " + reply.dump());
}

}  // namespace

struct RemoteJudge::Impl {
    explicit Impl(const JudgeConfig& config)
        : parts(split_endpoint(config.endpoint)), client(parts.base) {
        client.set_connection_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
        client.set_read_timeout(config.timeout_ms / 1000, (config.timeout_ms % 1000) * 1000);
        if (!config.auth_env.empty()) {
            const char* token = std::getenv(config.auth_env.c_str());
            if (!token)
                throw ConfigError("judge auth environment variable '" + config.auth_env +
                                  "' is not set");
            bearer = token;
        }
    }
    EndpointParts parts;
    httplib::Client client;
    std::string bearer;
};

RemoteJudge::RemoteJudge(JudgeConfig config) : config_(std::move(config)) {
    config_.validate();
    impl_ = std::make_unique<Impl>(config_);
}

RemoteJudge::~RemoteJudge() = default;

std::string RemoteJudge::complete(const std::string& prompt) {
    json body{{"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", config_.temperature}};
    httplib::Headers headers;
    if (!impl_->bearer.empty()) headers.emplace("Authorization", "Bearer " + impl_->bearer);
    auto result =
        impl_->client.Post(impl_->parts.path, headers, body.dump(), "application/json");
    if (!result)
        throw AnnotationError("judge transport failure: " + httplib::to_string(result.error()));
    if (result->status < 200 || result->status >= 300)
        throw AnnotationError("judge returned HTTP " + std::to_string(result->status));
    json reply;
    try {
        reply = json::parse(result->body);
    } catch (const json::exception& e) {
        throw AnnotationError(std::string("judge reply is not JSON: ") + e.what());
    }
    return extract_text_field(reply);
}

FacetVerdict RemoteJudge::classify(const std::vector<Turn>& context_turns,
                                   std::string_view response_text, Facet facet) {
    ++calls_;
    const std::string prompt =
        build_prompt(facet, context_turns, response_text, config_.prompt_version);
    std::string failure;
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            return make_verdict(facet, parse_class(facet, complete(prompt)));
        } catch (const AnnotationError& e) {
            failure = e.what();
        }
    }
    throw AnnotationError(failure);
}

std::unique_ptr<Judge> make_judge(const JudgeConfig& config) {
    config.validate();
    if (config.kind == JudgeConfig::Kind::RuleOracle) return std::make_unique<RuleOracleJudge>();
    return std::make_unique<RemoteJudge>(config);
}

}  // namespace esref
