// Provider-agnostic HTTP client for chat-completion endpoints with retries,
// bounded concurrency, and a content-addressed disk cache of JSON files.
#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cfope {

struct LlmEndpointConfig {
    std::string base_url;         // e.g. "http://127.0.0.1:8099"
    std::string model_name;
    std::string api_key_env_var;  // name of the env var holding the key; may be empty
    // Absent means the endpoint's default configuration (the temperature field
    // is omitted from the request body).
    std::optional<double> temperature = 0.0;
    int max_retries = 3;  // additional attempts after the first
    double timeout_seconds = 60.0;
    int max_concurrency = 4;
    int backoff_base_ms = 250;
    // "openai_chat" (default) or "anthropic_messages".
    std::string provider = "openai_chat";

    void validate() const;
};

/// Transport failure after retries were exhausted; carries the attempt log.
class TransportError : public std::runtime_error {
  public:
    TransportError(const std::string& message, std::vector<std::string> attempt_log)
        : std::runtime_error(message), attempts_(std::move(attempt_log)) {}

    const std::vector<std::string>& attempts() const { return attempts_; }

  private:
    std::vector<std::string> attempts_;
};

/// Authentication rejection (401/403); never retried.
class AuthError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompletionResult {
    std::string text;           // assistant message content
    std::string prompt_sha256;
    std::string created_at;     // ISO 8601 UTC, from the cache entry
    bool from_cache = false;
};

struct CompleteOptions {
    // Skip the cache read (the fresh response is still written back). Used by
    // callers retrying after a response that failed their own parsing.
    bool refresh = false;
};

class LlmClient {
  public:
    // cache_dir may be empty to disable the disk cache.
    LlmClient(LlmEndpointConfig config, std::string cache_dir);
    ~LlmClient();
    LlmClient(LlmClient&&) noexcept;
    LlmClient& operator=(LlmClient&&) noexcept;

    /// Cache-first completion. On a miss, POSTs the prompt with bounded
    /// concurrency, retrying transport errors, 5xx/429 statuses, and malformed
    /// response envelopes with exponential backoff. Auth failures throw
    /// AuthError immediately; exhausted retries throw TransportError with the
    /// attempt log.
    CompletionResult complete(const std::string& prompt, const CompleteOptions& options = {});

    const LlmEndpointConfig& config() const;

    static std::string cache_key(const std::string& model_name, std::optional<double> temperature,
                                 const std::string& prompt);

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view data);

}  // namespace cfope
