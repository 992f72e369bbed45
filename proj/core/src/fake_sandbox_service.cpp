#include "pvrl/fake_sandbox_service.hpp"

#include "pvrl/media.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

namespace pvrl {

using nlohmann::json;

namespace {

void reply_error(httplib::Response& res, int status, const std::string& message)
{
    res.status = status;
    res.set_content(json{{"error", message}}.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
}

int status_for(SandboxErrorKind kind)
{
    switch (kind) {
    case SandboxErrorKind::InitFailure: return 400;
    case SandboxErrorKind::Timeout: return 408;
    case SandboxErrorKind::SessionDead: return 410;
    case SandboxErrorKind::ImageLimitExceeded: return 413;
    case SandboxErrorKind::BadResponse:
    case SandboxErrorKind::Unreachable: return 500;
    }
    return 500;
}

} // namespace

struct FakeSandboxService::Impl {
    explicit Impl(FakeSandboxOptions options) : sandbox(with_real_time(std::move(options))) {}

    static FakeSandboxOptions with_real_time(FakeSandboxOptions o)
    {
        o.real_time = true;
        return o;
    }

    FakeSandbox sandbox;
    httplib::Server server;
    std::thread thread;
    int port = -1;
    std::atomic<long long> stall_ms{0};
};

FakeSandboxService::FakeSandboxService(FakeSandboxOptions options) : impl_(std::make_unique<Impl>(std::move(options)))
{
    auto& srv = impl_->server;
    auto* impl = impl_.get();

    srv.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });

    srv.Post("/v1/sessions", [impl](const httplib::Request& req, httplib::Response& res) {
        SandboxInit init;
        try {
            const auto body = json::parse(req.body);
            for (const auto& img : body.value("images", json::array()))
                init.images.push_back(base64_decode(img.at("png_base64").get<std::string>()));
            if (body.contains("video") && !body["video"].is_null()) {
                const auto& v = body["video"];
                VideoPreload video;
                video.reference = v.contains("path") ? v["path"].get<std::string>() : v.at("url").get<std::string>();
                video.max_frames_cap = v.value("max_frames_cap", 0);
                init.video = std::move(video);
            }
        } catch (const std::exception& e) {
            reply_error(res, 400, std::string("bad session payload: ") + e.what());
            return;
        }
        try {
            const auto id = impl->sandbox.create_session(init);
            res.set_content(json{{"session_id", id}}.dump(), "application/json");
        } catch (const SandboxError& e) {
            reply_error(res, status_for(e.kind()), e.what());
        }
    });

    srv.Post(R"(/v1/sessions/([^/]+)/exec)", [impl](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        std::string code;
        std::int64_t timeout_ms = 30000;
        try {
            const auto body = json::parse(req.body);
            code = body.at("code").get<std::string>();
            timeout_ms = body.value("timeout_ms", timeout_ms);
        } catch (const std::exception& e) {
            reply_error(res, 400, std::string("bad exec payload: ") + e.what());
            return;
        }
        if (const auto stall = impl->stall_ms.load(); stall > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(stall));
        try {
            const auto r = impl->sandbox.execute(id, code, std::chrono::milliseconds(timeout_ms));
            json images = json::array();
            for (const auto& img : r.images)
                images.push_back({{"png_base64", base64_encode(img.png)}, {"width", img.width}, {"height", img.height}});
            json out{{"stdout", r.stdout_text},
                     {"images", std::move(images)},
                     {"display_hook_invoked", r.display_hook_invoked},
                     {"duration_ms", r.duration_ms}};
            out["error"] = r.error ? json(*r.error) : json(nullptr);
            res.set_content(out.dump(-1, ' ', false, json::error_handler_t::replace), "application/json");
        } catch (const SandboxError& e) {
            reply_error(res, status_for(e.kind()), e.what());
        }
    });

    srv.Delete(R"(/v1/sessions/([^/]+))", [impl](const httplib::Request& req, httplib::Response& res) {
        impl->sandbox.close_session(req.matches[1]);
        res.status = 204;
    });

    impl_->port = srv.bind_to_any_port("127.0.0.1");
    if (impl_->port < 0) throw std::runtime_error("fake sandbox service could not bind a port");
    impl_->thread = std::thread([impl] { impl->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

FakeSandboxService::~FakeSandboxService()
{
    stop();
}

void FakeSandboxService::stop()
{
    if (!impl_ || !impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

int FakeSandboxService::port() const
{
    return impl_->port;
}

std::string FakeSandboxService::base_url() const
{
    return "http://127.0.0.1:" + std::to_string(impl_->port);
}

FakeSandbox& FakeSandboxService::backend()
{
    return impl_->sandbox;
}

void FakeSandboxService::set_exec_stall(std::chrono::milliseconds stall)
{
    impl_->stall_ms = stall.count();
}

} // namespace pvrl
