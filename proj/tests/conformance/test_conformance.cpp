#include "pvrl/fake_sandbox.hpp"
#include "pvrl/fake_sandbox_service.hpp"
#include "pvrl/http_sandbox.hpp"
#include "pvrl/media.hpp"
#include "test_support.hpp"

#include <ostream>
#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <memory>
#include <random>

namespace pvrl {
namespace {

using nlohmann::json;
using namespace std::chrono_literals;

constexpr auto kDefaultTimeout = 5000ms;
constexpr auto kWallSlack = 300ms;

const json& corpus()
{
    static const json c = json::parse(test::read_file(PVRL_CONFORMANCE_CORPUS));
    return c;
}

/// A sandbox under test plus whatever keeps it alive.
struct Backend {
    std::unique_ptr<FakeSandboxService> service;
    std::unique_ptr<Sandbox> sandbox;
};

enum class Kind { InProcess, Http };

void PrintTo(Kind k, std::ostream* os) { *os << (k == Kind::InProcess ? "InProcess" : "Http"); }

Backend make_backend(Kind kind)
{
    Backend b;
    if (kind == Kind::InProcess) {
        b.sandbox = std::make_unique<FakeSandbox>();
    } else {
        b.service = std::make_unique<FakeSandboxService>();
        HttpSandboxOptions o;
        o.base_url = b.service->base_url();
        b.sandbox = std::make_unique<HttpSandboxClient>(o);
    }
    return b;
}

SandboxInit init_from(const json& j)
{
    SandboxInit init;
    for (const auto& dims : j.value("images", json::array()))
        init.images.push_back(solid_png(dims[0].get<int>(), dims[1].get<int>(), {90, 120, 150}));
    for (const auto& raw : j.value("raw_images", json::array())) init.images.push_back(base64_decode(raw.get<std::string>()));
    if (j.contains("video")) init.video = VideoPreload{j["video"].get<std::string>(), 0};
    return init;
}

std::string outcome_of(SandboxErrorKind k)
{
    switch (k) {
    case SandboxErrorKind::Timeout: return "timeout";
    case SandboxErrorKind::SessionDead: return "dead";
    case SandboxErrorKind::ImageLimitExceeded: return "image_limit";
    case SandboxErrorKind::InitFailure: return "init_failure";
    default: return std::string("error:") + to_string(k);
    }
}

void run_case(Sandbox& sb, const json& c)
{
    SCOPED_TRACE(c.at("name").get<std::string>());
    const auto init = init_from(c.at("init"));
    SessionId session;
    try {
        session = sb.create_session(init);
    } catch (const SandboxError& e) {
        EXPECT_EQ(outcome_of(e.kind()), c.value("create", "ok")) << e.what();
        return;
    }
    ASSERT_EQ(c.value("create", "ok"), "ok");

    int step_no = 0;
    for (const auto& step : c.at("steps")) {
        SCOPED_TRACE("step " + std::to_string(step_no++));
        if (step.value("delete", false)) {
            sb.close_session(session);
            continue;
        }
        const auto timeout = std::chrono::milliseconds(step.value("timeout_ms", std::int64_t(kDefaultTimeout.count())));
        const auto& expect = step.at("expect");
        const auto want = expect.at("outcome").get<std::string>();
        const auto t0 = std::chrono::steady_clock::now();
        std::string got = "ok";
        ExecResult r;
        try {
            r = sb.execute(session, step.at("code").get<std::string>(), timeout);
        } catch (const SandboxError& e) {
            got = outcome_of(e.kind());
        }
        const auto elapsed = std::chrono::steady_clock::now() - t0;
        ASSERT_EQ(got, want);
        if (want == "timeout") EXPECT_LE(elapsed, timeout + kTimeoutGrace + kWallSlack);
        if (want != "ok") continue;
        if (expect.contains("stdout")) EXPECT_EQ(r.stdout_text, expect["stdout"].get<std::string>());
        if (expect.contains("images")) {
            ASSERT_EQ(r.images.size(), expect["images"].size());
            for (std::size_t i = 0; i < r.images.size(); ++i) {
                const PixelSize want_dims{expect["images"][i][0].get<int>(), expect["images"][i][1].get<int>()};
                EXPECT_EQ(png_dimensions(r.images[i].png), want_dims);
                EXPECT_EQ((PixelSize{r.images[i].width, r.images[i].height}), want_dims);
            }
        }
        if (expect.contains("display_hook")) EXPECT_EQ(r.display_hook_invoked, expect["display_hook"].get<bool>());
        if (expect.contains("error_contains")) {
            ASSERT_TRUE(r.error);
            EXPECT_NE(r.error->find(expect["error_contains"].get<std::string>()), std::string::npos) << *r.error;
        } else {
            EXPECT_FALSE(r.error) << *r.error;
        }
    }
    sb.close_session(session);
}

class Conformance : public ::testing::TestWithParam<Kind> {};

TEST_P(Conformance, Corpus)
{
    auto backend = make_backend(GetParam());
    ASSERT_GE(corpus().at("cases").size(), 10u);
    for (const auto& c : corpus().at("cases")) run_case(*backend.sandbox, c);
}

TEST_P(Conformance, IsolationFuzz)
{
    auto backend = make_backend(GetParam());
    auto& sb = *backend.sandbox;
    std::mt19937 rng(2024);
    const int probes = corpus().at("isolation_probes").get<int>();
    SandboxInit init;
    init.images.push_back(solid_png(8, 8, {0, 0, 0}));
    for (int p = 0; p < probes; ++p) {
        const auto a = sb.create_session(init);
        const auto b = sb.create_session(init);
        const auto name = "v" + std::to_string(rng() % 100000);
        const auto value = std::to_string(rng() % 1000000);
        sb.execute(a, name + " = " + value, 2s);
        const bool b_defines = rng() % 2 == 0;
        if (b_defines) sb.execute(b, name + " = -1", 2s);
        const auto probe = sb.execute(b, "print(" + name + ")", 2s);
        if (b_defines) {
            ASSERT_EQ(probe.stdout_text, "-1\n") << name;
        } else {
            ASSERT_TRUE(probe.error) << name << " leaked: " << probe.stdout_text;
            ASSERT_NE(probe.error->find("NameError"), std::string::npos);
        }
        ASSERT_EQ(sb.execute(a, "print(" + name + ")", 2s).stdout_text, value + "\n");
        sb.close_session(a);
        sb.close_session(b);
    }
}

INSTANTIATE_TEST_SUITE_P(Backends, Conformance, ::testing::Values(Kind::InProcess, Kind::Http),
                         [](const auto& info) { return info.param == Kind::InProcess ? "InProcess" : "Http"; });

TEST(WireFormat, ByteCompatible)
{
    const auto& w = corpus().at("wire");
    const auto& e = w.at("exec_body");
    EXPECT_EQ(HttpSandboxClient::exec_body(e.at("code"), std::chrono::milliseconds(e.at("timeout_ms").get<int>())),
              e.at("bytes").get<std::string>());
    for (const auto* key : {"create_body_video_path", "create_body_video_url"}) {
        const auto& c = w.at(key);
        SandboxInit init;
        init.video = VideoPreload{c.at("video"), c.at("max_frames_cap")};
        EXPECT_EQ(HttpSandboxClient::create_body(init), c.at("bytes").get<std::string>()) << key;
    }
}

} // namespace
} // namespace pvrl
