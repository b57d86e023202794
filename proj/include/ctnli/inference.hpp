#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctnli/errors.hpp"
#include "ctnli/prompting.hpp"
#include "ctnli/util.hpp"

namespace ctnli {

struct RetryPolicy {
    int max_attempts = 3;
    double backoff_base_ms = 250.0; // doubled per attempt, plus jitter
    double jitter_ms = 50.0;
};

struct EndpointConfig {
    std::string base_url = "http://localhost:8000";
    std::string model_name = "gpt-4";
    std::string api_key_env = "CTNLI_API_KEY";
    double temperature = 0.0;
    double top_p = 1.0;
    int max_new_tokens = 8; // 100 for CoT strategies
    double timeout_s = 60.0;
    int max_parallel = 4;
    RetryPolicy retry;

    void validate() const {
        if (temperature < 0) throw ConfigError("temperature must be >= 0");
        if (top_p <= 0 || top_p > 1) throw ConfigError("top_p must be in (0, 1]");
        if (max_new_tokens < 1) throw ConfigError("max_new_tokens must be >= 1");
        if (max_parallel < 1) throw ConfigError("max_parallel must be >= 1");
        if (timeout_s <= 0) throw ConfigError("timeout_s must be > 0");
    }
};

inline constexpr int kMaxNewTokensBase = 8;
inline constexpr int kMaxNewTokensCot = 100;

struct GenerationRecord {
    std::string uuid;
    std::string prompt_fingerprint;
    std::string output_text;
    std::string finish_reason;
    double latency_ms = 0.0;
    int attempt_count = 0;
    std::string error; // empty on success

    bool ok() const { return error.empty(); }
};

struct BackendResponse {
    std::string text;
    std::string finish_reason = "stop";
};

class Backend {
public:
    virtual ~Backend() = default;
    // single attempt; throws on failure (TransientFailure is retryable)
    virtual BackendResponse generate(const RenderedPrompt& prompt,
                                     const EndpointConfig& config) = 0;
};

// Scripted in-process endpoint keyed by prompt fingerprint.
class MockBackend : public Backend {
public:
    struct Entry {
        std::string response;
        int fail_first = 0; // transient failures before succeeding
        double delay_ms = 0.0;
    };

    explicit MockBackend(std::string default_response = "")
        : default_response_(std::move(default_response)) {}

    void script(const std::string& fingerprint, Entry entry) {
        std::lock_guard lock(mutex_);
        script_[fingerprint] = std::move(entry);
    }

    void script_response(const std::string& fingerprint, const std::string& response) {
        script(fingerprint, Entry{response, 0, 0.0});
    }

    BackendResponse generate(const RenderedPrompt& prompt, const EndpointConfig&) override {
        Entry entry;
        {
            std::lock_guard lock(mutex_);
            request_log_.push_back(prompt.fingerprint);
            auto it = script_.find(prompt.fingerprint);
            if (it == script_.end()) {
                entry.response = default_response_;
            } else {
                if (it->second.fail_first > 0) {
                    --it->second.fail_first;
                    throw TransientFailure("scripted transient failure");
                }
                entry = it->second;
            }
        }
        if (entry.delay_ms > 0)
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(entry.delay_ms));
        return {entry.response, "stop"};
    }

    std::vector<std::string> request_log() const {
        std::lock_guard lock(mutex_);
        return request_log_;
    }

private:
    mutable std::mutex mutex_;
    std::string default_response_;
    std::map<std::string, Entry> script_;
    std::vector<std::string> request_log_;
};

// load a mock script file: {"default": "...", "responses": {fingerprint: text}}
inline std::unique_ptr<MockBackend> mock_backend_from_file(const std::filesystem::path& file) {
    auto doc = nlohmann::json::parse(read_file(file));
    auto backend = std::make_unique<MockBackend>(doc.value("default", std::string()));
    if (doc.contains("responses"))
        for (auto& [fp, text] : doc["responses"].items())
            backend->script_response(fp, text.get<std::string>());
    return backend;
}

// retrying wrapper around one Backend attempt
inline GenerationRecord complete(Backend& backend, const EndpointConfig& config,
                                 const RenderedPrompt& prompt, const std::string& uuid = "",
                                 std::function<void(double)> sleep_ms = {}) {
    config.validate();
    GenerationRecord rec;
    rec.uuid = uuid;
    rec.prompt_fingerprint = prompt.fingerprint;
    auto start = std::chrono::steady_clock::now();
    SplitMix64 jitter_rng(std::hash<std::string>{}(prompt.fingerprint));
    if (!sleep_ms)
        sleep_ms = [](double ms) {
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
        };
    for (int attempt = 1;; ++attempt) {
        rec.attempt_count = attempt;
        try {
            auto resp = backend.generate(prompt, config);
            rec.output_text = resp.text;
            rec.finish_reason = resp.finish_reason;
            break;
        } catch (const AuthFailure&) {
            throw;
        } catch (const Error& e) {
            if (attempt >= config.retry.max_attempts) {
                rec.error = e.what();
                break;
            }
            double backoff = config.retry.backoff_base_ms * std::pow(2.0, attempt - 1) +
                             config.retry.jitter_ms * jitter_rng.next_double();
            sleep_ms(backoff);
        }
    }
    rec.latency_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    return rec;
}

inline nlohmann::json record_to_json(const GenerationRecord& rec) {
    nlohmann::json j;
    j["uuid"] = rec.uuid;
    j["prompt_fingerprint"] = rec.prompt_fingerprint;
    j["output_text"] = rec.output_text;
    j["finish_reason"] = rec.finish_reason;
    j["latency_ms"] = rec.latency_ms;
    j["attempt_count"] = rec.attempt_count;
    if (!rec.error.empty()) j["error"] = rec.error;
    return j;
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
    GenerationRecord rec;
    rec.uuid = j.at("uuid").get<std::string>();
    rec.prompt_fingerprint = j.at("prompt_fingerprint").get<std::string>();
    rec.output_text = j.at("output_text").get<std::string>();
    rec.finish_reason = j.value("finish_reason", "");
    rec.latency_ms = j.value("latency_ms", 0.0);
    rec.attempt_count = j.value("attempt_count", 1);
    rec.error = j.value("error", "");
    return rec;
}

// Append-only line-delimited checkpoint of GenerationRecords.
class CheckpointWriter {
public:
    explicit CheckpointWriter(std::filesystem::path path) : path_(std::move(path)) {
        if (std::filesystem::exists(path_)) {
            std::istringstream in(read_file(path_));
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto rec = record_from_json(nlohmann::json::parse(line));
                if (rec.ok()) completed_[rec.uuid] = rec; // failed items are retried on rerun
            }
        }
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        out_.open(path_, std::ios::app | std::ios::binary);
        if (!out_) throw IoFailure("cannot open checkpoint " + path_.string());
    }

    std::optional<GenerationRecord> completed(const std::string& uuid) const {
        std::lock_guard lock(mutex_);
        auto it = completed_.find(uuid);
        if (it == completed_.end()) return std::nullopt;
        return it->second;
    }

    void append(const GenerationRecord& rec) {
        std::lock_guard lock(mutex_);
        out_ << record_to_json(rec).dump() << '\n';
        out_.flush();
        if (rec.ok()) completed_[rec.uuid] = rec;
    }

private:
    std::filesystem::path path_;
    mutable std::mutex mutex_;
    std::map<std::string, GenerationRecord> completed_;
    std::ofstream out_;
};

struct BatchItem {
    std::string uuid;
    RenderedPrompt prompt;
};

// Bounded-parallel batch; output order always equals input order.
inline std::vector<GenerationRecord> batch_complete(Backend& backend,
                                                    const EndpointConfig& config,
                                                    const std::vector<BatchItem>& items,
                                                    CheckpointWriter* checkpoint = nullptr,
                                                    bool fail_fast = false) {
    config.validate();
    std::vector<GenerationRecord> results(items.size());
    std::vector<size_t> pending;
    for (size_t i = 0; i < items.size(); ++i) {
        if (checkpoint) {
            if (auto rec = checkpoint->completed(items[i].uuid)) {
                results[i] = *rec;
                continue;
            }
        }
        pending.push_back(i);
    }

    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex result_mutex;
    std::exception_ptr first_error;

    auto worker = [&] {
        for (;;) {
            size_t slot = next.fetch_add(1);
            if (slot >= pending.size() || abort.load()) return;
            size_t i = pending[slot];
            GenerationRecord rec = complete(backend, config, items[i].prompt, items[i].uuid);
            {
                std::lock_guard lock(result_mutex);
                results[i] = rec;
                if (checkpoint) checkpoint->append(rec);
                if (!rec.ok() && fail_fast && !first_error) {
                    first_error = std::make_exception_ptr(TransientFailure(rec.error));
                    abort.store(true);
                }
            }
        }
    };

    int n_threads = std::min<int>(config.max_parallel, static_cast<int>(pending.size()));
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return results;
}

} // namespace ctnli
