#include "pvrl/http_sandbox.hpp"

#include "pvrl/fake_sandbox_service.hpp"
#include "pvrl/media.hpp"
#include "pvrl/scaffold.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <chrono>

namespace pvrl {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;

// Scheduling slack on top of the client deadline when measuring wall time.
constexpr auto kWallSlack = 300ms;

HttpSandboxClient client_for(const FakeSandboxService& svc)
{
    HttpSandboxOptions o;
    o.base_url = svc.base_url();
    return HttpSandboxClient(o);
}

SandboxInit image_init()
{
    SandboxInit init;
    init.images.push_back(solid_png(320, 200, {1, 2, 3}));
    return init;
}

TEST(HttpSandbox, CreateBodyShape)
{
    SandboxInit init = image_init();
    init.video = VideoPreload{"https://example.org/v.mp4", 64};
    const auto j = json::parse(HttpSandboxClient::create_body(init));
    ASSERT_EQ(j.at("images").size(), 1u);
    EXPECT_EQ(base64_decode(j["images"][0].at("png_base64").get<std::string>()), init.images[0]);
    EXPECT_EQ(j.at("video").at("url"), "https://example.org/v.mp4");
    EXPECT_EQ(j["video"].at("max_frames_cap"), 64);

    init.video = VideoPreload{"/data/v.mp4", 0};
    EXPECT_EQ(json::parse(HttpSandboxClient::create_body(init)).at("video").at("path"), "/data/v.mp4");
}

TEST(HttpSandbox, ExecBodyShape)
{
    const auto j = json::parse(HttpSandboxClient::exec_body("print(1)", 1500ms));
    EXPECT_EQ(j.at("code"), "print(1)");
    EXPECT_EQ(j.at("timeout_ms"), 1500);
}

TEST(HttpSandbox, DecodeRejectsDimensionMismatch)
{
    json body = {{"stdout", ""},
                 {"images", json::array({{{"png_base64", base64_encode(solid_png(10, 10, {0, 0, 0}))},
                                          {"width", 11},
                                          {"height", 10}}})},
                 {"error", nullptr},
                 {"display_hook_invoked", true},
                 {"duration_ms", 3}};
    try {
        HttpSandboxClient::decode_exec_response(body.dump());
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::BadResponse);
    }
    body["images"][0]["width"] = 10;
    const auto r = HttpSandboxClient::decode_exec_response(body.dump());
    EXPECT_EQ(r.images.at(0).width, 10);
    EXPECT_TRUE(r.display_hook_invoked);
}

TEST(HttpSandbox, DecodeRejectsGarbage)
{
    EXPECT_THROW(HttpSandboxClient::decode_exec_response("{not json"), SandboxError);
    EXPECT_THROW(HttpSandboxClient::decode_exec_response("{\"stdout\":\"\"}"), SandboxError);
}

TEST(HttpSandbox, DecodeSanitizesInvalidUtf8)
{
    json body = {{"stdout", "@@"}, {"images", json::array()}, {"display_hook_invoked", false}, {"duration_ms", 0}};
    auto text = body.dump();
    text.replace(text.find("@@"), 2, "@\xff");
    const auto r = HttpSandboxClient::decode_exec_response(text);
    EXPECT_EQ(r.stdout_text.rfind("@", 0), 0u);
    EXPECT_NE(r.stdout_text, std::string("@\xff"));
}

TEST(HttpSandbox, RoundTripAgainstService)
{
    FakeSandboxService svc;
    auto client = client_for(svc);
    EXPECT_TRUE(client.healthy());
    const auto s = client.create_session(image_init());
    client.execute(s, "a = 5", 2s);
    EXPECT_EQ(client.execute(s, "print(a * a)", 2s).stdout_text, "25\n");
    const auto r = client.execute(s, "import matplotlib.pyplot as plt\nplt.imshow(image_clue_0)\nplt.show()", 2s);
    ASSERT_EQ(r.images.size(), 1u);
    EXPECT_EQ(png_dimensions(r.images[0].png), (PixelSize{r.images[0].width, r.images[0].height}));
    client.close_session(s);
    client.close_session(s);
    EXPECT_EQ(svc.backend().open_sessions(), 0);
}

TEST(HttpSandbox, ServiceSideTimeout)
{
    FakeSandboxService svc;
    auto client = client_for(svc);
    const auto s = client.create_session(image_init());
    const auto timeout = 300ms;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        client.execute(s, "while True:\n    pass", timeout);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::Timeout);
    }
    EXPECT_LE(std::chrono::steady_clock::now() - t0, timeout + kTimeoutGrace + kWallSlack);
    client.close_session(s);
}

TEST(HttpSandbox, ClientDeadlineOnHungService)
{
    FakeSandboxService svc;
    svc.set_exec_stall(2s);
    auto client = client_for(svc);
    const auto s = client.create_session(image_init());
    const auto timeout = 200ms;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        client.execute(s, "print(1)", timeout);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::Timeout);
    }
    const auto elapsed = std::chrono::steady_clock::now() - t0;
    EXPECT_GE(elapsed, timeout + kTimeoutGrace - 50ms);
    EXPECT_LE(elapsed, timeout + kTimeoutGrace + kWallSlack);
    svc.set_exec_stall(0ms);
    client.close_session(s);
}

TEST(HttpSandbox, DeadSessionAndImageCap)
{
    FakeSandboxService svc;
    auto client = client_for(svc);
    // Caps are not on the wire; the service applies its default of 8 per execution.
    const auto s = client.create_session(image_init());
    try {
        client.execute(s, "import matplotlib.pyplot as plt\nfor i in range(9):\n    plt.imshow(image_clue_0)\n    plt.show()", 2s);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::ImageLimitExceeded);
    }
    try {
        client.execute(s, "import os\nos._exit(1)", 2s);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::SessionDead);
    }
    try {
        client.execute("no-such-session", "print(1)", 2s);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::SessionDead);
    }
    client.close_session(s);
}

TEST(HttpSandbox, UnreadableVideoIsInitFailure)
{
    FakeSandboxOptions o;
    o.unreadable_videos.insert("missing.mp4");
    FakeSandboxService svc(o);
    auto client = client_for(svc);
    SandboxInit init;
    init.video = VideoPreload{"missing.mp4", 0};
    try {
        client.create_session(init);
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::InitFailure);
    }
}

TEST(HttpSandbox, UnreachableAfterRetries)
{
    HttpSandboxOptions o;
    o.base_url = "http://127.0.0.1:9";
    o.max_retries = 1;
    o.backoff = 10ms;
    HttpSandboxClient client(o);
    EXPECT_FALSE(client.healthy());
    try {
        client.create_session(image_init());
        FAIL();
    } catch (const SandboxError& e) {
        EXPECT_EQ(e.kind(), SandboxErrorKind::Unreachable);
    }
    client.close_session("whatever"); // must not throw
}

TEST(HttpSandbox, EpisodeOverHttpMatchesInProcess)
{
    FakeSandboxService svc;
    auto client = client_for(svc);
    FakeSandbox local;
    const auto sample = test::image_sample("s", 640, 480);
    const auto run = [&](Sandbox& sb) {
        ScriptedPolicy policy({test::code_turn("w, h = image_clue_0.size\nprint(w + h)"),
                               test::code_turn("import matplotlib.pyplot as plt\nplt.imshow(image_clue_0)\nplt.show()"), test::answer_turn("B")});
        EpisodeOptions o;
        o.trajectory_id = "t";
        o.clock = test::zero_clock();
        return run_episode(sample, policy, sb, ScaffoldConfig{}, o);
    };
    const auto remote = run(client);
    const auto inproc = run(local);
    EXPECT_EQ(remote.status(), Status::Completed);
    EXPECT_EQ(remote.tool_calls(), 2);
    EXPECT_EQ(remote.visual_tokens(), inproc.visual_tokens());
    EXPECT_EQ(std::get<InterpreterOutput>(remote.segments()[2]).stdout_text, "1120\n");
    EXPECT_EQ(svc.backend().open_sessions(), 0);
}

} // namespace
} // namespace pvrl
