#pragma once

#include <string>

#include "patchsmooth/oracle.hpp"

namespace patchsmooth {

/// OpenAI-compatible chat-completions endpoint. `endpoint` carries scheme,
/// host and optional port ("http://127.0.0.1:8080"); `path` is the completion
/// route. Environment variables PATCHSMOOTH_ENDPOINT, PATCHSMOOTH_MODEL and
/// PATCHSMOOTH_API_TOKEN override the file-loaded values.
struct HttpBackendConfig {
    std::string endpoint;
    std::string path = "/v1/chat/completions";
    std::string model;
    std::string api_token;  // empty = no Authorization header
    int max_tokens = 512;
    double timeout_sec = 30.0;
    int max_retries = 2;          // transient failures retried up to this count
    int backoff_initial_ms = 100; // doubled per retry
    int connection_limit = 4;     // bound on concurrent in-flight requests

    void validate() const;
};

HttpBackendConfig http_config_from_json(const std::string& json_text);
HttpBackendConfig http_config_from_json_file(const std::string& path);
void apply_env_overrides(HttpBackendConfig& config);

/// One vision-chat completion per query: JSON body with the model name and a
/// single user message holding a base64 data-URL image part and a text part,
/// temperature 0. The first choice's message content is the response text.
/// Transient failures (connect/timeout, 408/429/5xx) are retried with
/// exponential backoff; other failures raise BackendError with a distinct
/// category.
class HttpBackend : public VlmBackend {
  public:
    explicit HttpBackend(HttpBackendConfig config);
    ~HttpBackend() override;

    VlmResponse query(const VlmRequest& request) const override;
    std::string id() const override;

    HttpBackend(const HttpBackend&) = delete;
    HttpBackend& operator=(const HttpBackend&) = delete;

  private:
    struct Slots;
    HttpBackendConfig config_;
    std::unique_ptr<Slots> slots_;
};

/// Asks a chat model whether a response realizes the target text and parses
/// a constrained YES/NO answer. Anything else raises
/// BackendError(UnparseableVerdict).
class RemoteJudge : public Judge {
  public:
    RemoteJudge(HttpBackendConfig config, std::string target_text);
    ~RemoteJudge() override;

    JudgeVerdict vpi(const std::string& response_text) const override;
    std::string id() const override;

  private:
    HttpBackendConfig config_;
    std::string target_text_;
};

std::string base64_encode(const unsigned char* data, std::size_t len);

}  // namespace patchsmooth
