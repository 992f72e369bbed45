#include "pvrl/http_sandbox.hpp"

#include "http_util.hpp"
#include "pvrl/media.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <thread>

namespace pvrl {

using nlohmann::json;

namespace {

bool is_url(const std::string& ref)
{
    return ref.starts_with("http://") || ref.starts_with("https://");
}

std::string error_text(const httplib::Result& res)
{
    if (!res) return httplib::to_string(res.error());
    try {
        const auto body = json::parse(res->body);
        if (body.contains("error") && body["error"].is_string()) return body["error"].get<std::string>();
    } catch (const json::exception&) {
    }
    return "HTTP " + std::to_string(res->status);
}

} // namespace

HttpSandboxClient::HttpSandboxClient(HttpSandboxOptions options) : options_(std::move(options))
{
    const auto base = detail::split_base_url(options_.base_url);
    origin_ = base.origin;
    prefix_ = base.prefix;
}

bool HttpSandboxClient::healthy() const
{
    try {
        httplib::Client client(origin_);
        detail::set_timeouts(client, options_.connect_timeout, options_.connect_timeout);
        const auto res = client.Get(prefix_ + "/v1/health");
        if (!res || res->status != 200) return false;
        return json::parse(res->body).value("status", "") == "ok";
    } catch (const std::exception&) {
        return false;
    }
}

std::string HttpSandboxClient::create_body(const SandboxInit& init)
{
    json body;
    body["images"] = json::array();
    for (const auto& png : init.images) body["images"].push_back({{"png_base64", base64_encode(png)}});
    if (init.video) {
        json video;
        video[is_url(init.video->reference) ? "url" : "path"] = init.video->reference;
        video["max_frames_cap"] = init.video->max_frames_cap;
        body["video"] = std::move(video);
    }
    return body.dump();
}

std::string HttpSandboxClient::exec_body(const std::string& code, std::chrono::milliseconds timeout)
{
    return json{{"code", code}, {"timeout_ms", timeout.count()}}.dump(-1, ' ', false, json::error_handler_t::replace);
}

ExecResult HttpSandboxClient::decode_exec_response(const std::string& body)
{
    try {
        const auto j = json::parse(sanitize_utf8(body));
        ExecResult r;
        r.stdout_text = sanitize_utf8(j.at("stdout").get<std::string>());
        for (const auto& img : j.at("images")) {
            RenderedImage out;
            out.png = base64_decode(img.at("png_base64").get<std::string>());
            out.width = img.at("width").get<int>();
            out.height = img.at("height").get<int>();
            const auto dims = png_dimensions(out.png);
            if (dims.width != out.width || dims.height != out.height)
                throw SandboxError(SandboxErrorKind::BadResponse,
                                   "image payload is " + std::to_string(dims.width) + "x" + std::to_string(dims.height) +
                                       " but declared " + std::to_string(out.width) + "x" + std::to_string(out.height));
            r.images.push_back(std::move(out));
        }
        if (j.contains("error") && !j["error"].is_null()) r.error = sanitize_utf8(j["error"].get<std::string>());
        r.display_hook_invoked = j.at("display_hook_invoked").get<bool>();
        r.duration_ms = j.at("duration_ms").get<std::int64_t>();
        if (r.duration_ms < 0) throw SandboxError(SandboxErrorKind::BadResponse, "negative duration_ms");
        return r;
    } catch (const json::exception& e) {
        throw SandboxError(SandboxErrorKind::BadResponse, std::string("malformed exec response: ") + e.what());
    } catch (const MediaError& e) {
        throw SandboxError(SandboxErrorKind::BadResponse, std::string("undecodable image in exec response: ") + e.what());
    }
}

SessionId HttpSandboxClient::create_session(const SandboxInit& init)
{
    const auto body = create_body(init);
    auto delay = options_.backoff;
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(origin_);
        detail::set_timeouts(client, options_.connect_timeout, options_.control_timeout);
        const auto res = client.Post(prefix_ + "/v1/sessions", body, "application/json");
        if (!res && detail::is_connect_failure(res.error()) && attempt < options_.max_retries) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
            continue;
        }
        if (!res) throw SandboxError(SandboxErrorKind::Unreachable, "sandbox unreachable: " + error_text(res));
        if (res->status == 400 || res->status == 422)
            throw SandboxError(SandboxErrorKind::InitFailure, "session init rejected: " + error_text(res));
        if (res->status != 200 && res->status != 201)
            throw SandboxError(SandboxErrorKind::BadResponse, "session create failed: " + error_text(res));
        try {
            return json::parse(res->body).at("session_id").get<std::string>();
        } catch (const json::exception& e) {
            throw SandboxError(SandboxErrorKind::BadResponse, std::string("malformed create response: ") + e.what());
        }
    }
}

ExecResult HttpSandboxClient::execute(const SessionId& session, const std::string& code,
                                      std::chrono::milliseconds timeout)
{
    const auto body = exec_body(code, timeout);
    const auto deadline = timeout + kTimeoutGrace;
    auto delay = options_.backoff;
    for (int attempt = 0;; ++attempt) {
        httplib::Client client(origin_);
        detail::set_timeouts(client, options_.connect_timeout, deadline);
        const auto started = std::chrono::steady_clock::now();
        const auto res = client.Post(prefix_ + "/v1/sessions/" + session + "/exec", body, "application/json");
        if (!res) {
            if (detail::is_connect_failure(res.error())) {
                if (attempt < options_.max_retries) {
                    std::this_thread::sleep_for(delay);
                    delay *= 2;
                    continue;
                }
                throw SandboxError(SandboxErrorKind::Unreachable, "sandbox unreachable: " + error_text(res));
            }
            if (std::chrono::steady_clock::now() - started >= deadline)
                throw SandboxError(SandboxErrorKind::Timeout, "no response within timeout + grace");
            throw SandboxError(SandboxErrorKind::SessionDead, "connection lost during execution: " + error_text(res));
        }
        switch (res->status) {
        case 200: return decode_exec_response(res->body);
        case 408: throw SandboxError(SandboxErrorKind::Timeout, error_text(res));
        case 404:
        case 410: throw SandboxError(SandboxErrorKind::SessionDead, error_text(res));
        case 413: throw SandboxError(SandboxErrorKind::ImageLimitExceeded, error_text(res));
        default:
            if (res->status >= 500) throw SandboxError(SandboxErrorKind::SessionDead, error_text(res));
            throw SandboxError(SandboxErrorKind::BadResponse, error_text(res));
        }
    }
}

void HttpSandboxClient::close_session(const SessionId& session) noexcept
{
    try {
        auto delay = options_.backoff;
        for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
            httplib::Client client(origin_);
            detail::set_timeouts(client, options_.connect_timeout, options_.control_timeout);
            const auto res = client.Delete(prefix_ + "/v1/sessions/" + session);
            if (res || !detail::is_connect_failure(res.error())) return;
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        spdlog::warn("could not close sandbox session {}", session);
    } catch (const std::exception& e) {
        spdlog::warn("closing sandbox session {} failed: {}", session, e.what());
    }
}

} // namespace pvrl
