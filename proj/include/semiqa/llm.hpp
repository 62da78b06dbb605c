#pragma once
// Chat-completion boundary: one interface, three backends. The remote
// backend speaks the OpenAI-compatible /v1/chat/completions wire format with
// retry/backoff; the scripted backend replays canned rules for offline runs;
// the cassette backend records any backend once and replays it byte-for-byte.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace semiqa {

struct ChatMessage {
    std::string role;  // "user" or "assistant"
    std::string content;
};

struct ChatRequest {
    std::string system;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::size_t max_tokens = 1024;
    std::string model = "default";
};

struct Completion {
    std::string text;
    std::size_t prompt_tokens = 0;
    std::size_t completion_tokens = 0;
};

class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& msg, bool retryable, int status = 0)
        : std::runtime_error(msg), retryable_(retryable), status_(status) {}
    bool retryable() const { return retryable_; }
    int status() const { return status_; }

private:
    bool retryable_;
    int status_;
};

class CassetteMissError : public BackendError {
public:
    explicit CassetteMissError(const std::string& hash)
        : BackendError("cassette miss for request " + hash, false) {}
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual Completion complete(const ChatRequest& req) = 0;
};

// Flattened prompt text the scripted backend matches against: system prompt
// and every message content joined by newlines.
std::string rendered_prompt(const ChatRequest& req);

// Identity of a request for cassette lookup. Covers system, messages, model
// and temperature; nothing else.
std::string request_hash(const ChatRequest& req);

class ScriptedBackend final : public Backend {
public:
    struct Rule {
        std::string match;  // substring of the rendered prompt
        std::string response;
    };

    ScriptedBackend() = default;
    explicit ScriptedBackend(std::string default_response)
        : default_response_(std::move(default_response)) {}

    ScriptedBackend& add_rule(std::string match, std::string response);
    void set_default(std::string response) { default_response_ = std::move(response); }

    Completion complete(const ChatRequest& req) override;

private:
    std::vector<Rule> rules_;  // first match wins
    std::string default_response_;
};

class RemoteBackend final : public Backend {
public:
    struct Options {
        std::string base_url;
        std::string api_key;
        std::string model;  // overrides ChatRequest.model when non-empty
        int attempts = 3;
        double timeout_s = 30.0;
        double backoff_s = 0.5;
        int max_inflight = 8;
    };

    explicit RemoteBackend(Options opts);

    // Reads SEMIQA_API_BASE and SEMIQA_API_KEY.
    static Options options_from_env();

    Completion complete(const ChatRequest& req) override;

private:
    Options opts_;
    std::unique_ptr<class InflightGate> gate_;
};

// Record mode (inner backend present): first sight of a request goes to the
// inner backend and is appended to the cassette; repeats replay from memory.
// Replay mode (no inner): unknown requests raise CassetteMissError.
class CassetteBackend final : public Backend {
public:
    CassetteBackend(std::shared_ptr<Backend> inner, std::string path);
    explicit CassetteBackend(std::string path);

    Completion complete(const ChatRequest& req) override;
    std::size_t entries() const;

private:
    void load();

    std::shared_ptr<Backend> inner_;
    std::string path_;
    std::map<std::string, std::string> responses_;
    mutable std::mutex mutex_;
};

}  // namespace semiqa
