#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ctnli/inference.hpp"

namespace ctnli {

// Chat-completions client over HTTP; one client covers GPT-style APIs and
// local servers that emulate them.
class HttpBackend : public Backend {
public:
    BackendResponse generate(const RenderedPrompt& prompt, const EndpointConfig& config) override {
        httplib::Client client(config.base_url);
        client.set_connection_timeout(std::chrono::duration<double>(config.timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(config.timeout_s));

        httplib::Headers headers;
        if (!config.api_key_env.empty()) {
            const char* key = std::getenv(config.api_key_env.c_str());
            if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        nlohmann::json body;
        body["model"] = config.model_name;
        body["messages"] = {{{"role", "system"}, {"content", prompt.system}},
                            {{"role", "user"}, {"content", prompt.user}}};
        body["temperature"] = config.temperature;
        body["top_p"] = config.top_p;
        body["max_tokens"] = config.max_new_tokens;

        auto res = client.Post("/v1/chat/completions", headers, body.dump(), "application/json");
        if (!res) {
            if (res.error() == httplib::Error::ConnectionTimeout ||
                res.error() == httplib::Error::Read)
                throw Timeout("request timed out against " + config.base_url);
            throw TransientFailure("transport error: " + httplib::to_string(res.error()));
        }
        if (res->status == 401 || res->status == 403)
            throw AuthFailure("endpoint rejected credentials (HTTP " +
                              std::to_string(res->status) + ")");
        if (res->status == 429) throw RateLimited("rate limited by endpoint");
        if (res->status >= 500)
            throw TransientFailure("server error HTTP " + std::to_string(res->status));
        if (res->status != 200)
            throw MalformedResponse("unexpected HTTP " + std::to_string(res->status));

        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw MalformedResponse(std::string("response is not JSON: ") + e.what());
        }
        if (!doc.contains("choices") || doc["choices"].empty())
            throw MalformedResponse("response has no choices");
        const auto& choice = doc["choices"][0];
        BackendResponse out;
        if (choice.contains("message") && choice["message"].contains("content") &&
            !choice["message"]["content"].is_null())
            out.text = choice["message"]["content"].get<std::string>();
        out.finish_reason = choice.value("finish_reason", "stop");
        return out;
    }
};

} // namespace ctnli
