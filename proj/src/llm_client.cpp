#include "cfope/llm_client.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <semaphore>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace cfope {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * length);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

void LlmEndpointConfig::validate() const {
    if (base_url.empty()) throw std::invalid_argument("endpoint config: base_url is empty");
    if (model_name.empty()) throw std::invalid_argument("endpoint config: model_name is empty");
    if (max_retries < 0) throw std::invalid_argument("endpoint config: max_retries must be >= 0");
    if (!(timeout_seconds > 0.0)) throw std::invalid_argument("endpoint config: timeout must be > 0");
    if (max_concurrency < 1) throw std::invalid_argument("endpoint config: max_concurrency must be >= 1");
    if (provider != "openai_chat" && provider != "anthropic_messages")
        throw std::invalid_argument("endpoint config: unknown provider " + provider);
}

namespace {

std::string iso8601_utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Numbers rendered through the json library so the key is stable across call
// sites ("0.0" and "0" must not produce distinct keys).
std::string temperature_token(const std::optional<double>& temperature) {
    return temperature ? json(*temperature).dump() : "default";
}

struct RequestSpec {
    std::string path;
    httplib::Headers headers;
    std::string body;
};

RequestSpec build_request(const LlmEndpointConfig& config, const std::string& prompt,
                          const std::string& api_key) {
    RequestSpec spec;
    json body;
    body["model"] = config.model_name;
    body["messages"] = json::array({{{"role", "user"}, {"content", prompt}}});
    if (config.provider == "anthropic_messages") {
        spec.path = "/v1/messages";
        body["max_tokens"] = 1024;
        if (!api_key.empty()) spec.headers.emplace("x-api-key", api_key);
        spec.headers.emplace("anthropic-version", "2023-06-01");
    } else {
        spec.path = "/v1/chat/completions";
        if (!api_key.empty()) spec.headers.emplace("Authorization", "Bearer " + api_key);
    }
    if (config.temperature) body["temperature"] = *config.temperature;
    spec.body = body.dump();
    return spec;
}

std::string extract_content(const LlmEndpointConfig& config, const std::string& body) {
    const json j = json::parse(body);
    if (config.provider == "anthropic_messages") return j.at("content").at(0).at("text").get<std::string>();
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
}

}  // namespace

struct LlmClient::Impl {
    LlmEndpointConfig config;
    std::string cache_dir;
    std::counting_semaphore<> in_flight;
    std::mutex cache_write_mutex;

    Impl(LlmEndpointConfig cfg, std::string dir)
        : config(std::move(cfg)), cache_dir(std::move(dir)), in_flight(config.max_concurrency) {}

    fs::path cache_path(const std::string& key) const { return fs::path(cache_dir) / (key + ".json"); }

    std::optional<json> cache_read(const std::string& key) const {
        if (cache_dir.empty()) return std::nullopt;
        std::ifstream in(cache_path(key));
        if (!in) return std::nullopt;
        try {
            json j;
            in >> j;
            return j;
        } catch (const json::exception&) {
            return std::nullopt;  // corrupt entry behaves like a miss
        }
    }

    // Write-then-rename so concurrent readers never observe a partial entry.
    void cache_write(const std::string& key, const json& entry) {
        if (cache_dir.empty()) return;
        std::lock_guard<std::mutex> lock(cache_write_mutex);
        fs::create_directories(cache_dir);
        const fs::path final_path = cache_path(key);
        const fs::path tmp_path = final_path.string() + ".tmp";
        {
            std::ofstream out(tmp_path);
            out << entry.dump(2) << "\n";
        }
        fs::rename(tmp_path, final_path);
    }

    std::string fetch(const std::string& prompt) {
        std::string api_key;
        if (!config.api_key_env_var.empty()) {
            if (const char* value = std::getenv(config.api_key_env_var.c_str())) api_key = value;
        }
        const RequestSpec spec = build_request(config, prompt, api_key);

        std::vector<std::string> attempts;
        const int total_attempts = config.max_retries + 1;
        for (int attempt = 1; attempt <= total_attempts; ++attempt) {
            if (attempt > 1) {
                const int delay = config.backoff_base_ms << (attempt - 2);
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            }
            in_flight.acquire();
            httplib::Client http(config.base_url);
            http.set_connection_timeout(std::chrono::duration<double>(config.timeout_seconds));
            http.set_read_timeout(std::chrono::duration<double>(config.timeout_seconds));
            auto res = http.Post(spec.path, spec.headers, spec.body, "application/json");
            in_flight.release();

            if (!res) {
                attempts.push_back("attempt " + std::to_string(attempt) + ": transport error (" +
                                   httplib::to_string(res.error()) + ")");
                continue;
            }
            if (res->status == 401 || res->status == 403) {
                throw AuthError("authentication rejected (HTTP " + std::to_string(res->status) + ")");
            }
            if (res->status >= 500 || res->status == 429) {
                attempts.push_back("attempt " + std::to_string(attempt) + ": HTTP " +
                                   std::to_string(res->status));
                continue;
            }
            if (res->status != 200) {
                attempts.push_back("attempt " + std::to_string(attempt) + ": HTTP " +
                                   std::to_string(res->status));
                throw TransportError("endpoint returned non-retryable HTTP " +
                                         std::to_string(res->status),
                                     std::move(attempts));
            }
            try {
                return extract_content(config, res->body);
            } catch (const json::exception& e) {
                attempts.push_back("attempt " + std::to_string(attempt) +
                                   ": malformed response envelope (" + e.what() + ")");
                continue;
            }
        }
        throw TransportError("request failed after " + std::to_string(total_attempts) + " attempts",
                             std::move(attempts));
    }
};

LlmClient::LlmClient(LlmEndpointConfig config, std::string cache_dir) {
    config.validate();
    impl_ = std::make_unique<Impl>(std::move(config), std::move(cache_dir));
}

LlmClient::~LlmClient() = default;
LlmClient::LlmClient(LlmClient&&) noexcept = default;
LlmClient& LlmClient::operator=(LlmClient&&) noexcept = default;

const LlmEndpointConfig& LlmClient::config() const { return impl_->config; }

std::string LlmClient::cache_key(const std::string& model_name, std::optional<double> temperature,
                                 const std::string& prompt) {
    return sha256_hex(model_name + "\n" + temperature_token(temperature) + "\n" + prompt);
}

CompletionResult LlmClient::complete(const std::string& prompt, const CompleteOptions& options) {
    const std::string key = cache_key(impl_->config.model_name, impl_->config.temperature, prompt);
    const std::string prompt_digest = sha256_hex(prompt);

    if (!options.refresh) {
        if (auto entry = impl_->cache_read(key)) {
            CompletionResult result;
            result.text = entry->at("response").get<std::string>();
            result.created_at = entry->at("created_at").get<std::string>();
            result.prompt_sha256 = prompt_digest;
            result.from_cache = true;
            return result;
        }
    }

    const std::string text = impl_->fetch(prompt);
    const std::string created_at = iso8601_utc_now();

    json entry;
    entry["schema_version"] = 1;
    entry["model"] = impl_->config.model_name;
    if (impl_->config.temperature)
        entry["temperature"] = *impl_->config.temperature;
    else
        entry["temperature"] = nullptr;
    entry["prompt_sha256"] = prompt_digest;
    entry["prompt"] = prompt;
    entry["response"] = text;
    entry["created_at"] = created_at;
    impl_->cache_write(key, entry);

    CompletionResult result;
    result.text = text;
    result.created_at = created_at;
    result.prompt_sha256 = prompt_digest;
    result.from_cache = false;
    return result;
}

}  // namespace cfope
