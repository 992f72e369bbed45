#include "pvrl/remote_policy.hpp"

#include "http_util.hpp"
#include "pvrl/media.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace pvrl {

using nlohmann::json;

std::string api_key_from_env()
{
    const char* key = std::getenv("PVRL_API_KEY");
    return key ? key : "";
}

struct RemotePolicy::Pool {
    Pool(std::string origin, int cap, const RemotePolicyOptions& o) : origin(std::move(origin)), cap(cap), options(o) {}

    std::unique_ptr<httplib::Client> acquire()
    {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return !idle.empty() || total < cap; });
        if (!idle.empty()) {
            auto c = std::move(idle.back());
            idle.pop_back();
            return c;
        }
        ++total;
        lock.unlock();
        auto c = std::make_unique<httplib::Client>(origin);
        c->set_keep_alive(true);
        detail::set_timeouts(*c, options.connect_timeout, options.request_timeout);
        if (!options.api_key.empty()) c->set_bearer_token_auth(options.api_key);
        return c;
    }

    void release(std::unique_ptr<httplib::Client> c, bool healthy)
    {
        {
            std::lock_guard lock(mu);
            if (healthy) idle.push_back(std::move(c));
            else --total;
        }
        cv.notify_one();
    }

    std::string origin;
    int cap;
    RemotePolicyOptions options;
    std::mutex mu;
    std::condition_variable cv;
    std::vector<std::unique_ptr<httplib::Client>> idle;
    int total = 0;
};

RemotePolicy::RemotePolicy(RemotePolicyOptions options) : options_(std::move(options))
{
    if (options_.model.empty()) throw std::invalid_argument("remote policy needs a model name");
    if (options_.max_connections < 1) throw std::invalid_argument("remote policy max_connections must be >= 1");
    const auto base = detail::split_base_url(options_.base_url);
    path_ = base.prefix + "/chat/completions";
    pool_ = std::make_unique<Pool>(base.origin, options_.max_connections, options_);
}

RemotePolicy::~RemotePolicy() = default;

std::string RemotePolicy::build_request_body(std::span<const PolicyMessage> messages, const GenerationParams& params) const
{
    json msgs = json::array();
    for (const auto& m : messages) {
        json entry;
        entry["role"] = m.role == Role::System ? "system" : m.role == Role::Assistant ? "assistant" : "user";
        const bool text_only = std::all_of(m.parts.begin(), m.parts.end(),
                                           [](const ContentPart& p) { return std::holds_alternative<std::string>(p); });
        if (text_only) {
            std::string text;
            for (const auto& p : m.parts) text += std::get<std::string>(p);
            entry["content"] = std::move(text);
        } else {
            json parts = json::array();
            for (const auto& p : m.parts) {
                if (const auto* t = std::get_if<std::string>(&p)) {
                    parts.push_back({{"type", "text"}, {"text", *t}});
                } else {
                    const auto& clue = std::get<ImageClue>(p);
                    parts.push_back({{"type", "image_url"},
                                     {"image_url", {{"url", "data:image/png;base64," + base64_encode(clue.png)}}}});
                }
            }
            entry["content"] = std::move(parts);
        }
        msgs.push_back(std::move(entry));
    }
    json body{{"model", options_.model},
              {"messages", std::move(msgs)},
              {"temperature", params.temperature},
              {"max_tokens", params.max_new_tokens},
              {"stop", params.stop}};
    if (params.top_k) body["top_k"] = *params.top_k;
    return body.dump(-1, ' ', false, json::error_handler_t::replace);
}

Generation RemotePolicy::parse_response(const std::string& body, const GenerationParams& params)
{
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception& e) {
        throw PolicyError(std::string("malformed completion response: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw PolicyError("completion response has no choices");
    const auto& choice = j["choices"][0];
    std::string text;
    const auto content = choice.contains("message") ? choice["message"].value("content", json()) : choice.value("text", json());
    if (content.is_string()) {
        text = content.get<std::string>();
    } else if (content.is_array()) {
        for (const auto& part : content)
            if (part.value("type", "") == "text") text += part.value("text", "");
    } else if (!content.is_null()) {
        throw PolicyError("completion content has an unexpected type");
    }
    const auto finish = choice.value("finish_reason", json()).is_string() ? choice["finish_reason"].get<std::string>() : "";

    // Servers strip the matched stop sequence; put it back so tags are closed.
    if (finish == "stop") {
        std::string matched;
        if (choice.contains("stop_reason") && choice["stop_reason"].is_string()) matched = choice["stop_reason"].get<std::string>();
        if (matched.empty()) {
            // Infer from the last unclosed tag.
            std::size_t best = std::string::npos;
            for (const auto& s : params.stop) {
                if (s.size() < 3 || s[0] != '<' || s[1] != '/') continue;
                const auto open = "<" + s.substr(2);
                const auto at = text.rfind(open);
                if (at == std::string::npos || text.find(s, at) != std::string::npos) continue;
                if (best == std::string::npos || at > best) {
                    best = at;
                    matched = s;
                }
            }
        }
        const bool known = std::find(params.stop.begin(), params.stop.end(), matched) != params.stop.end();
        if (!matched.empty() && known && !text.ends_with(matched)) text += matched;
    }
    auto g = finish_generation(std::move(text), params.stop);
    if (finish == "length" && g.reason != StopReason::StopSequence) g.reason = StopReason::Length;
    return g;
}

Generation RemotePolicy::generate(std::span<const PolicyMessage> messages, const GenerationParams& params)
{
    if (!params.valid()) throw std::invalid_argument("invalid generation parameters");
    const auto body = build_request_body(messages, params);
    auto delay = options_.backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        auto client = pool_->acquire();
        const auto res = client->Post(path_, body, "application/json");
        const bool ok = static_cast<bool>(res);
        pool_->release(std::move(client), ok);
        if (!ok) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw PolicyError("policy backend rejected the request: HTTP " + std::to_string(res->status) + " " +
                              res->body.substr(0, 200));
        return parse_response(res->body, params);
    }
    throw PolicyError("policy backend failed after retries: " + last_error);
}

} // namespace pvrl
