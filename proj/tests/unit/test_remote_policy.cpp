#include "pvrl/remote_policy.hpp"

#include "fake_chat_server.hpp"
#include "pvrl/fake_sandbox.hpp"
#include "pvrl/media.hpp"
#include "pvrl/scaffold.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <thread>

namespace pvrl {
namespace {

using namespace std::chrono_literals;
using nlohmann::json;
using test::ChatReply;
using test::FakeChatServer;

RemotePolicyOptions options_for(const std::string& url)
{
    RemotePolicyOptions o;
    o.base_url = url;
    o.model = "policy-7b";
    o.backoff = 10ms;
    return o;
}

std::vector<PolicyMessage> small_context()
{
    const auto png = solid_png(28, 28, {0, 0, 0});
    return {
        {Role::System, {std::string("sys"), ImageClue{png, 28, 28, ClueSource::Hint, 1}}},
        {Role::Assistant, {std::string("<code>print(1)</code>")}},
        {Role::ToolResult, {std::string("1\n")}},
    };
}

TEST(RemotePolicy, RequestBodySnapshot)
{
    RemotePolicy p(options_for("http://127.0.0.1:1/v1"));
    GenerationParams params;
    params.temperature = 0.5;
    params.top_k = 20;
    params.max_new_tokens = 256;
    const auto body = json::parse(p.build_request_body(small_context(), params));
    const auto uri = "data:image/png;base64," + base64_encode(solid_png(28, 28, {0, 0, 0}));
    const json expected = {
        {"model", "policy-7b"},
        {"messages",
         {{{"role", "system"},
           {"content",
            {{{"type", "text"}, {"text", "sys"}}, {{"type", "image_url"}, {"image_url", {{"url", uri}}}}}}},
          {{"role", "assistant"}, {"content", "<code>print(1)</code>"}},
          {{"role", "user"}, {"content", "1\n"}}}},
        {"temperature", 0.5},
        {"top_k", 20},
        {"max_tokens", 256},
        {"stop", {"</code>", "</answer>"}},
    };
    EXPECT_EQ(body, expected) << body.dump(2);
}

TEST(RemotePolicy, BodyIsDeterministicAndOmitsSeed)
{
    RemotePolicy p(options_for("http://127.0.0.1:1/v1"));
    GenerationParams a, b;
    b.seed = 99;
    EXPECT_EQ(p.build_request_body(small_context(), a), p.build_request_body(small_context(), b));
    EXPECT_FALSE(json::parse(p.build_request_body(small_context(), a)).contains("top_k"));
}

TEST(RemotePolicy, ParseRestoresStrippedStop)
{
    const GenerationParams params;
    auto g = RemotePolicy::parse_response(FakeChatServer::completion("look\n<code>\nprint(1)\n"), params);
    EXPECT_EQ(g.text, "look\n<code>\nprint(1)\n</code>");
    EXPECT_EQ(g.reason, StopReason::StopSequence);

    g = RemotePolicy::parse_response(FakeChatServer::completion("<answer>\\boxed{A}", "stop", "</answer>"), params);
    EXPECT_EQ(g.text, "<answer>\\boxed{A}</answer>");

    g = RemotePolicy::parse_response(FakeChatServer::completion("<code>x = ", "length"), params);
    EXPECT_EQ(g.reason, StopReason::Length);
    EXPECT_EQ(g.text, "<code>x = ");

    g = RemotePolicy::parse_response(FakeChatServer::completion("plain"), params);
    EXPECT_EQ(g.text, "plain");
}

TEST(RemotePolicy, ParseRejectsMalformed)
{
    const GenerationParams params;
    EXPECT_THROW(RemotePolicy::parse_response("nope", params), PolicyError);
    EXPECT_THROW(RemotePolicy::parse_response("{\"choices\":[]}", params), PolicyError);
}

TEST(RemotePolicy, RetriesServerErrors)
{
    FakeChatServer server([](const std::string&, int i) {
        if (i < 2) return ChatReply{503, "busy"};
        return ChatReply{200, FakeChatServer::completion("<answer>\\boxed{B}", "stop", "</answer>")};
    });
    RemotePolicy p(options_for(server.base_url()));
    const auto g = p.generate(small_context(), GenerationParams{});
    EXPECT_EQ(g.text, "<answer>\\boxed{B}</answer>");
    EXPECT_EQ(server.requests(), 3);
}

TEST(RemotePolicy, GivesUpAfterRetries)
{
    FakeChatServer server([](const std::string&, int) { return ChatReply{500, "boom"}; });
    auto o = options_for(server.base_url());
    o.max_retries = 1;
    RemotePolicy p(o);
    EXPECT_THROW(p.generate(small_context(), GenerationParams{}), PolicyError);
    EXPECT_EQ(server.requests(), 2);
}

TEST(RemotePolicy, ClientErrorIsNotRetried)
{
    FakeChatServer server([](const std::string&, int) { return ChatReply{400, "bad"}; });
    RemotePolicy p(options_for(server.base_url()));
    EXPECT_THROW(p.generate(small_context(), GenerationParams{}), PolicyError);
    EXPECT_EQ(server.requests(), 1);
}

TEST(RemotePolicy, SendsBearerToken)
{
    FakeChatServer server([](const std::string&, int) { return ChatReply{200, FakeChatServer::completion("hi")}; });
    auto o = options_for(server.base_url());
    o.api_key = "sk-test";
    RemotePolicy p(o);
    p.generate(small_context(), GenerationParams{});
    ASSERT_EQ(server.auth_headers().size(), 1u);
    EXPECT_EQ(server.auth_headers()[0], "Bearer sk-test");
}

TEST(RemotePolicy, DownBackendBreaksEpisode)
{
    auto o = options_for("http://127.0.0.1:9/v1");
    o.max_retries = 1;
    o.connect_timeout = 200ms;
    RemotePolicy p(o);
    FakeSandbox sb;
    EpisodeOptions eo;
    eo.trajectory_id = "t";
    eo.clock = test::zero_clock();
    const auto t = run_episode(test::image_sample("s"), p, sb, ScaffoldConfig{}, eo);
    EXPECT_EQ(t.broken_reason(), BrokenReason::BackendFailure);
    EXPECT_EQ(sb.open_sessions(), 0);
}

TEST(RemotePolicy, ConnectionCapBoundsInFlight)
{
    std::atomic<int> in_flight{0}, peak{0};
    FakeChatServer server([&](const std::string&, int) {
        const int now = ++in_flight;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {}
        std::this_thread::sleep_for(30ms);
        --in_flight;
        return ChatReply{200, FakeChatServer::completion("ok")};
    });
    auto o = options_for(server.base_url());
    o.max_connections = 2;
    RemotePolicy p(o);
    {
        std::vector<std::jthread> workers;
        for (int i = 0; i < 8; ++i) workers.emplace_back([&] { p.generate(small_context(), GenerationParams{}); });
    }
    EXPECT_EQ(server.requests(), 8);
    EXPECT_LE(peak.load(), 2);
}

TEST(RemotePolicy, EpisodeAgainstFakeServer)
{
    FakeChatServer server([](const std::string&, int i) {
        if (i == 0) return ChatReply{200, FakeChatServer::completion("Check.\n<code>\nprint(6 * 7)\n")};
        return ChatReply{200, FakeChatServer::completion("<answer>\\boxed{B}", "stop", "</answer>")};
    });
    RemotePolicy p(options_for(server.base_url()));
    FakeSandbox sb;
    EpisodeOptions eo;
    eo.trajectory_id = "t";
    eo.clock = test::zero_clock();
    const auto t = run_episode(test::image_sample("s"), p, sb, ScaffoldConfig{}, eo);
    EXPECT_EQ(t.status(), Status::Completed);
    EXPECT_EQ(t.tool_calls(), 1);
    const auto second = json::parse(server.bodies().at(1));
    const auto& msgs = second.at("messages");
    ASSERT_EQ(msgs.size(), 3u);
    EXPECT_EQ(msgs[2].at("role"), "user");
    EXPECT_NE(msgs[2].dump().find("42"), std::string::npos);
}

TEST(RemotePolicy, RequiresModel)
{
    auto o = options_for("http://127.0.0.1:1/v1");
    o.model.clear();
    EXPECT_THROW(RemotePolicy{o}, std::invalid_argument);
}

} // namespace
} // namespace pvrl
