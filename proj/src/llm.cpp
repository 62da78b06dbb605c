#include "semiqa/llm.hpp"

#include "semiqa/text_norm.hpp"

#include "httplib.h"
#include "json.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <semaphore>
#include <thread>

namespace semiqa {

using nlohmann::json;

std::string rendered_prompt(const ChatRequest& req) {
    std::string out = req.system;
    for (const auto& m : req.messages) {
        if (!out.empty()) out.push_back('\n');
        out += m.content;
    }
    return out;
}

std::string request_hash(const ChatRequest& req) {
    json j;
    j["system"] = req.system;
    j["messages"] = json::array();
    for (const auto& m : req.messages) {
        j["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    j["model"] = req.model;
    j["temperature"] = req.temperature;
    return hex64(fnv1a64(j.dump()));
}

ScriptedBackend& ScriptedBackend::add_rule(std::string match, std::string response) {
    rules_.push_back({std::move(match), std::move(response)});
    return *this;
}

Completion ScriptedBackend::complete(const ChatRequest& req) {
    const std::string prompt = rendered_prompt(req);
    for (const auto& rule : rules_) {
        if (prompt.find(rule.match) != std::string::npos) {
            return {rule.response, 0, 0};
        }
    }
    return {default_response_, 0, 0};
}

// Bounds concurrent remote calls.
class InflightGate {
public:
    explicit InflightGate(int limit)
        : sem_(std::max(1, limit)) {}
    void acquire() { sem_.acquire(); }
    void release() { sem_.release(); }

private:
    std::counting_semaphore<> sem_;
};

RemoteBackend::RemoteBackend(Options opts)
    : opts_(std::move(opts)), gate_(std::make_unique<InflightGate>(opts_.max_inflight)) {}

RemoteBackend::Options RemoteBackend::options_from_env() {
    Options o;
    if (const char* base = std::getenv("SEMIQA_API_BASE")) o.base_url = base;
    if (const char* key = std::getenv("SEMIQA_API_KEY")) o.api_key = key;
    return o;
}

Completion RemoteBackend::complete(const ChatRequest& req) {
    if (opts_.base_url.empty()) {
        throw BackendError("no API base configured (set SEMIQA_API_BASE)", false);
    }
    json body;
    body["model"] = opts_.model.empty() ? req.model : opts_.model;
    body["messages"] = json::array();
    if (!req.system.empty()) {
        body["messages"].push_back({{"role", "system"}, {"content", req.system}});
    }
    for (const auto& m : req.messages) {
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});
    }
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    const std::string payload = body.dump();

    gate_->acquire();
    struct Release {
        InflightGate* g;
        ~Release() { g->release(); }
    } release{gate_.get()};

    std::string last_error;
    for (int attempt = 0; attempt < opts_.attempts; ++attempt) {
        if (attempt > 0) {
            auto delay = std::chrono::duration<double>(
                opts_.backoff_s * static_cast<double>(1 << (attempt - 1)));
            std::this_thread::sleep_for(delay);
        }
        httplib::Client client(opts_.base_url);
        client.set_connection_timeout(std::chrono::duration<double>(opts_.timeout_s));
        client.set_read_timeout(std::chrono::duration<double>(opts_.timeout_s));
        httplib::Headers headers;
        if (!opts_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + opts_.api_key);
        }
        auto res = client.Post("/v1/chat/completions", headers, payload,
                               "application/json");
        if (!res) {
            last_error = "connection failed: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 400 && res->status < 500) {
            throw BackendError("chat request rejected (HTTP " +
                                   std::to_string(res->status) +
                                   "): " + res->body.substr(0, 200),
                               false, res->status);
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        json j = json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
            last_error = "unparseable chat response";
            continue;
        }
        Completion c;
        c.text = j["choices"][0].value("message", json::object())
                     .value("content", std::string{});
        if (j.contains("usage")) {
            c.prompt_tokens = j["usage"].value("prompt_tokens", 0);
            c.completion_tokens = j["usage"].value("completion_tokens", 0);
        }
        return c;
    }
    throw BackendError("chat request failed after " + std::to_string(opts_.attempts) +
                           " attempts: " + last_error,
                       true);
}

CassetteBackend::CassetteBackend(std::shared_ptr<Backend> inner, std::string path)
    : inner_(std::move(inner)), path_(std::move(path)) {
    load();
}

CassetteBackend::CassetteBackend(std::string path) : path_(std::move(path)) {
    std::ifstream probe(path_);
    if (!probe) {
        throw BackendError("cassette not found: " + path_, false);
    }
    load();
}

void CassetteBackend::load() {
    std::ifstream in(path_);
    std::string line;
    while (in && std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        std::string hash = j.value("request_hash", std::string{});
        if (!hash.empty()) responses_[hash] = j.value("response", std::string{});
    }
}

std::size_t CassetteBackend::entries() const {
    std::lock_guard lock(mutex_);
    return responses_.size();
}

Completion CassetteBackend::complete(const ChatRequest& req) {
    const std::string hash = request_hash(req);
    {
        std::lock_guard lock(mutex_);
        auto it = responses_.find(hash);
        if (it != responses_.end()) return {it->second, 0, 0};
    }
    if (!inner_) throw CassetteMissError(hash);
    Completion c = inner_->complete(req);
    {
        std::lock_guard lock(mutex_);
        responses_[hash] = c.text;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw BackendError("cannot append to cassette: " + path_, false);
        json j;
        j["request_hash"] = hash;
        j["response"] = c.text;
        out << j.dump() << "\n";
    }
    return c;
}

}  // namespace semiqa
