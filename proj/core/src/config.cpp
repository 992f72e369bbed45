#include "pvrl/config.hpp"

#include "json_codec.hpp"
#include "pvrl/http_sandbox.hpp"
#include "pvrl/media.hpp"
#include "pvrl/remote_policy.hpp"
#include "pvrl/trajectory_io.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace pvrl {

namespace {

template <class T>
constexpr const char* type_name()
{
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else if constexpr (std::is_same_v<T, std::string>) return "a string";
    else return "a list";
}

/// One YAML mapping being read; remembers which keys were consumed so the rest can be
/// reported as unknown.
class Section {
public:
    Section(YAML::Node node, std::string path, std::vector<std::string>& warnings)
        : node_(std::move(node)), path_(std::move(path)), warnings_(warnings)
    {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigValidationError(label() + ": expected a mapping");
    }

    bool has(const char* key) const { return node_ && node_.IsMap() && node_[key]; }

    template <class T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!has(key)) return;
        const YAML::Node v = node_[key];
        try {
            if constexpr (std::is_same_v<T, std::vector<std::string>> || std::is_same_v<T, std::vector<double>>) {
                if (!v.IsSequence()) throw YAML::Exception(v.Mark(), "not a sequence");
            } else if (!v.IsScalar()) {
                throw YAML::Exception(v.Mark(), "not a scalar");
            }
            out = v.as<T>();
        } catch (const YAML::Exception&) {
            throw ConfigValidationError(child_path(key) + ": expected " + type_name<T>());
        }
    }

    template <class T>
    void get_optional(const char* key, std::optional<T>& out)
    {
        seen_.insert(key);
        if (!has(key)) return;
        if (node_[key].IsNull()) {
            out.reset();
            return;
        }
        T value{};
        get(key, value);
        out = value;
    }

    Section child(const char* key)
    {
        seen_.insert(key);
        return Section(has(key) ? node_[key] : YAML::Node(), child_path(key), warnings_);
    }

    /// Keys present in the mapping, in document order.
    std::vector<std::string> keys() const
    {
        std::vector<std::string> out;
        if (node_ && node_.IsMap())
            for (const auto& kv : node_) out.push_back(kv.first.as<std::string>());
        return out;
    }

    const YAML::Node& node() const { return node_; }
    std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    void finish() const
    {
        for (const auto& k : keys())
            if (!seen_.contains(k)) {
                warnings_.push_back(child_path(k) + ": unknown key ignored");
                spdlog::warn("config: {}: unknown key ignored", child_path(k));
            }
    }

private:
    YAML::Node node_;
    std::string path_;
    std::vector<std::string>& warnings_;
    std::set<std::string> seen_;
};

VerifierKind verifier_value(Section& s, const char* key, VerifierKind def)
{
    std::string name = to_string(def);
    s.get(key, name);
    const auto v = verifier_kind_from_string(name);
    if (!v) throw ConfigValidationError(s.child_path(key) + ": must be one of choice, numeric, exact");
    return *v;
}

void read_scaffold(Section s, ScaffoldConfig& c)
{
    s.get("max_turns", c.max_turns);
    s.get("max_context_tokens", c.max_context_tokens);
    std::int64_t timeout = c.code_timeout.count();
    s.get("code_timeout_ms", timeout);
    c.code_timeout = std::chrono::milliseconds(timeout);
    s.get("max_images_per_exec", c.max_images_per_exec);
    s.get("max_rendered_edge", c.max_rendered_edge);
    s.get("patch_px", c.patch_px);
    s.get("merge_factor", c.merge_factor);
    s.get("min_pixels", c.min_pixels);
    s.get("max_pixels", c.max_pixels);
    s.get("max_stdout_bytes", c.max_stdout_bytes);
    s.finish();
}

void read_pipeline(Section s, PipelineConfig& c)
{
    s.get("oversample_ratio", c.oversample_ratio);
    s.get("batch_size", c.batch_size);
    s.get("group_size", c.group_size);
    s.get("max_concurrent", c.max_concurrent);
    s.finish();
}

void read_reward(Section s, RewardConfig& c)
{
    s.get("tool_coefficient", c.tool_coefficient);
    s.get("numeric_rel_tol", c.numeric_rel_tol);
    s.get("numeric_abs_tol", c.numeric_abs_tol);
    auto v = s.child("verifiers");
    c.multiple_choice = verifier_value(v, "multiple_choice", c.multiple_choice);
    c.numeric = verifier_value(v, "numeric", c.numeric);
    c.free_text = verifier_value(v, "free_text", c.free_text);
    v.finish();
    s.finish();
}

void read_generation(Section s, GenerationParams& c)
{
    s.get("temperature", c.temperature);
    s.get_optional("top_k", c.top_k);
    s.get("max_new_tokens", c.max_new_tokens);
    s.get("stop", c.stop);
    s.finish();
}

std::string resolve(const std::string& p, const std::filesystem::path& base)
{
    if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
}

PolicyBackendConfig read_policy(Section s, const std::filesystem::path& base)
{
    const auto present = s.keys();
    std::vector<std::string> backends;
    for (const auto& k : present)
        if (k == "remote" || k == "scripted" || k == "stochastic") backends.push_back(k);
    if (backends.size() != 1)
        throw ConfigValidationError("policy: exactly one backend (remote, scripted, stochastic) is required, found " +
                                    std::to_string(backends.size()));
    PolicyBackendConfig out;
    if (backends[0] == "remote") {
        RemotePolicyConfig c;
        auto r = s.child("remote");
        r.get("url", c.url);
        r.get("model", c.model);
        r.get("max_connections", c.max_connections);
        r.get("max_retries", c.max_retries);
        r.get("request_timeout_ms", c.request_timeout_ms);
        r.finish();
        out = c;
    } else if (backends[0] == "scripted") {
        ScriptedPolicyConfig c;
        auto r = s.child("scripted");
        r.get("fixture", c.fixture);
        r.finish();
        c.fixture = resolve(c.fixture, base);
        out = c;
    } else {
        StochasticPolicyConfig c;
        auto r = s.child("stochastic");
        r.get("intercept", c.intercept);
        r.get("slope", c.slope);
        r.get("turn_weights", c.turn_weights);
        r.get("answer_pool", c.answer_pool);
        r.get("seed", c.seed);
        r.finish();
        out = c;
    }
    s.finish();
    return out;
}

SandboxBackendConfig read_sandbox(Section s)
{
    const bool http = s.has("http"), fake = s.has("fake");
    if (http == fake)
        throw ConfigValidationError("sandbox: exactly one backend (http, fake) is required, found " +
                                    std::to_string(int(http) + int(fake)));
    SandboxBackendConfig out;
    if (http) {
        HttpSandboxConfig c;
        auto r = s.child("http");
        r.get("url", c.url);
        r.get("max_retries", c.max_retries);
        r.finish();
        out = c;
    } else {
        FakeSandboxConfig c;
        auto r = s.child("fake");
        if (!r.node().IsScalar()) { // "fake: true" / "fake: {}" both select the defaults
            r.get("video_frames", c.video_frames);
            r.get("video_width", c.video_width);
            r.get("video_height", c.video_height);
            r.get("video_fps", c.video_fps);
            r.finish();
        }
        out = c;
    }
    s.finish();
    return out;
}

bool http_url(const std::string& url) { return url.starts_with("http://") || url.starts_with("https://"); }

std::string num(double v) { return fmt::format("{}", v); }

} // namespace

RunConfig parse_config(std::string_view yaml, const std::filesystem::path& base_dir, std::vector<std::string>* warnings)
{
    YAML::Node root;
    try {
        root = YAML::Load(std::string(yaml));
    } catch (const YAML::Exception& e) {
        throw ConfigParseError(std::string("config is not valid YAML: ") + e.what());
    }
    if (!root || root.IsNull()) throw ConfigValidationError("<root>: config is empty");
    if (!root.IsMap()) throw ConfigParseError("config must be a YAML mapping");

    std::vector<std::string> local;
    auto& warn = warnings ? *warnings : local;
    Section top(root, "", warn);
    RunConfig c;
    top.get("seed", c.seed);
    top.get("output_dir", c.output_dir);
    read_scaffold(top.child("scaffold"), c.scaffold);
    read_pipeline(top.child("pipeline"), c.pipeline);
    read_reward(top.child("reward"), c.reward);
    read_generation(top.child("generation"), c.generation);
    c.policy = read_policy(top.child("policy"), base_dir);
    c.sandbox = read_sandbox(top.child("sandbox"));
    top.finish();
    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path, std::vector<std::string>* warnings)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigParseError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    auto c = parse_config(ss.str(), path.parent_path(), warnings);
    apply_env_overrides(c);
    validate(c);
    return c;
}

void validate(const RunConfig& c)
{
    const auto fail = [](const std::string& msg) { throw ConfigValidationError(msg); };
    if (auto e = c.scaffold.validation_error(); !e.empty()) fail("scaffold." + e);
    if (auto e = c.pipeline.validation_error(); !e.empty()) fail("pipeline." + e);
    if (!(c.reward.tool_coefficient >= 0.0)) fail("reward.tool_coefficient: must be >= 0");
    if (!(c.reward.numeric_rel_tol >= 0.0)) fail("reward.numeric_rel_tol: must be >= 0");
    if (!(c.reward.numeric_abs_tol >= 0.0)) fail("reward.numeric_abs_tol: must be >= 0");
    if (!(c.generation.temperature >= 0.0)) fail("generation.temperature: must be >= 0");
    if (c.generation.top_k && *c.generation.top_k < 1) fail("generation.top_k: must be >= 1");
    if (c.generation.max_new_tokens < 1) fail("generation.max_new_tokens: must be >= 1");
    if (c.generation.stop.empty()) fail("generation.stop: must not be empty");
    if (c.output_dir.empty()) fail("output_dir: must not be empty");

    if (const auto* r = std::get_if<RemotePolicyConfig>(&c.policy)) {
        if (!http_url(r->url)) fail("policy.remote.url: must be an http(s) URL");
        if (r->model.empty()) fail("policy.remote.model: required");
        if (r->max_connections < 1) fail("policy.remote.max_connections: must be >= 1");
        if (r->max_retries < 0) fail("policy.remote.max_retries: must be >= 0");
        if (r->request_timeout_ms < 1) fail("policy.remote.request_timeout_ms: must be positive");
    } else if (const auto* s = std::get_if<ScriptedPolicyConfig>(&c.policy)) {
        if (s->fixture.empty()) fail("policy.scripted.fixture: required");
    } else {
        const auto& st = std::get<StochasticPolicyConfig>(c.policy);
        if (!std::isfinite(st.intercept)) fail("policy.stochastic.intercept: must be finite");
        if (!std::isfinite(st.slope)) fail("policy.stochastic.slope: must be finite");
        double total = 0;
        for (double w : st.turn_weights) {
            if (!(w >= 0.0) || !std::isfinite(w)) fail("policy.stochastic.turn_weights: must be finite and >= 0");
            total += w;
        }
        if (!(total > 0.0)) fail("policy.stochastic.turn_weights: must have a positive sum");
        if (st.answer_pool.empty()) fail("policy.stochastic.answer_pool: must not be empty");
    }

    if (const auto* h = std::get_if<HttpSandboxConfig>(&c.sandbox)) {
        if (!http_url(h->url)) fail("sandbox.http.url: must be an http(s) URL");
        if (h->max_retries < 0) fail("sandbox.http.max_retries: must be >= 0");
    } else {
        const auto& f = std::get<FakeSandboxConfig>(c.sandbox);
        if (f.video_frames < 1) fail("sandbox.fake.video_frames: must be >= 1");
        if (f.video_width < 1) fail("sandbox.fake.video_width: must be >= 1");
        if (f.video_height < 1) fail("sandbox.fake.video_height: must be >= 1");
        if (!(f.video_fps > 0.0)) fail("sandbox.fake.video_fps: must be positive");
    }
}

std::string dump_config(const RunConfig& c)
{
    YAML::Emitter e;
    e << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << c.seed;
    e << YAML::Key << "output_dir" << YAML::Value << YAML::DoubleQuoted << c.output_dir;

    e << YAML::Key << "scaffold" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "max_turns" << YAML::Value << c.scaffold.max_turns;
    e << YAML::Key << "max_context_tokens" << YAML::Value << c.scaffold.max_context_tokens;
    e << YAML::Key << "code_timeout_ms" << YAML::Value << static_cast<std::int64_t>(c.scaffold.code_timeout.count());
    e << YAML::Key << "max_images_per_exec" << YAML::Value << c.scaffold.max_images_per_exec;
    e << YAML::Key << "max_rendered_edge" << YAML::Value << c.scaffold.max_rendered_edge;
    e << YAML::Key << "patch_px" << YAML::Value << c.scaffold.patch_px;
    e << YAML::Key << "merge_factor" << YAML::Value << c.scaffold.merge_factor;
    e << YAML::Key << "min_pixels" << YAML::Value << c.scaffold.min_pixels;
    e << YAML::Key << "max_pixels" << YAML::Value << c.scaffold.max_pixels;
    e << YAML::Key << "max_stdout_bytes" << YAML::Value << c.scaffold.max_stdout_bytes;
    e << YAML::EndMap;

    e << YAML::Key << "pipeline" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "oversample_ratio" << YAML::Value << num(c.pipeline.oversample_ratio);
    e << YAML::Key << "batch_size" << YAML::Value << c.pipeline.batch_size;
    e << YAML::Key << "group_size" << YAML::Value << c.pipeline.group_size;
    e << YAML::Key << "max_concurrent" << YAML::Value << c.pipeline.max_concurrent;
    e << YAML::EndMap;

    e << YAML::Key << "reward" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "tool_coefficient" << YAML::Value << num(c.reward.tool_coefficient);
    e << YAML::Key << "numeric_rel_tol" << YAML::Value << num(c.reward.numeric_rel_tol);
    e << YAML::Key << "numeric_abs_tol" << YAML::Value << num(c.reward.numeric_abs_tol);
    e << YAML::Key << "verifiers" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "multiple_choice" << YAML::Value << to_string(c.reward.multiple_choice);
    e << YAML::Key << "numeric" << YAML::Value << to_string(c.reward.numeric);
    e << YAML::Key << "free_text" << YAML::Value << to_string(c.reward.free_text);
    e << YAML::EndMap << YAML::EndMap;

    e << YAML::Key << "generation" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "temperature" << YAML::Value << num(c.generation.temperature);
    e << YAML::Key << "top_k" << YAML::Value;
    if (c.generation.top_k) e << *c.generation.top_k;
    else e << YAML::Null;
    e << YAML::Key << "max_new_tokens" << YAML::Value << c.generation.max_new_tokens;
    e << YAML::Key << "stop" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (const auto& s : c.generation.stop) e << YAML::DoubleQuoted << s;
    e << YAML::EndSeq << YAML::EndMap;

    e << YAML::Key << "policy" << YAML::Value << YAML::BeginMap;
    if (const auto* r = std::get_if<RemotePolicyConfig>(&c.policy)) {
        e << YAML::Key << "remote" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "url" << YAML::Value << YAML::DoubleQuoted << r->url;
        e << YAML::Key << "model" << YAML::Value << YAML::DoubleQuoted << r->model;
        e << YAML::Key << "max_connections" << YAML::Value << r->max_connections;
        e << YAML::Key << "max_retries" << YAML::Value << r->max_retries;
        e << YAML::Key << "request_timeout_ms" << YAML::Value << r->request_timeout_ms;
        e << YAML::EndMap;
    } else if (const auto* s = std::get_if<ScriptedPolicyConfig>(&c.policy)) {
        e << YAML::Key << "scripted" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "fixture" << YAML::Value << YAML::DoubleQuoted << s->fixture;
        e << YAML::EndMap;
    } else {
        const auto& st = std::get<StochasticPolicyConfig>(c.policy);
        e << YAML::Key << "stochastic" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "intercept" << YAML::Value << num(st.intercept);
        e << YAML::Key << "slope" << YAML::Value << num(st.slope);
        e << YAML::Key << "turn_weights" << YAML::Value << YAML::Flow << YAML::BeginSeq;
        for (double w : st.turn_weights) e << num(w);
        e << YAML::EndSeq;
        e << YAML::Key << "answer_pool" << YAML::Value << YAML::Flow << YAML::BeginSeq;
        for (const auto& a : st.answer_pool) e << YAML::DoubleQuoted << a;
        e << YAML::EndSeq;
        e << YAML::Key << "seed" << YAML::Value << st.seed;
        e << YAML::EndMap;
    }
    e << YAML::EndMap;

    e << YAML::Key << "sandbox" << YAML::Value << YAML::BeginMap;
    if (const auto* h = std::get_if<HttpSandboxConfig>(&c.sandbox)) {
        e << YAML::Key << "http" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "url" << YAML::Value << YAML::DoubleQuoted << h->url;
        e << YAML::Key << "max_retries" << YAML::Value << h->max_retries;
        e << YAML::EndMap;
    } else {
        const auto& f = std::get<FakeSandboxConfig>(c.sandbox);
        e << YAML::Key << "fake" << YAML::Value << YAML::BeginMap;
        e << YAML::Key << "video_frames" << YAML::Value << f.video_frames;
        e << YAML::Key << "video_width" << YAML::Value << f.video_width;
        e << YAML::Key << "video_height" << YAML::Value << f.video_height;
        e << YAML::Key << "video_fps" << YAML::Value << num(f.video_fps);
        e << YAML::EndMap;
    }
    e << YAML::EndMap;
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

void apply_env_overrides(RunConfig& c)
{
    if (const char* url = std::getenv("PVRL_SANDBOX_URL"); url && *url)
        if (auto* h = std::get_if<HttpSandboxConfig>(&c.sandbox)) h->url = url;
    if (const char* url = std::getenv("PVRL_POLICY_URL"); url && *url)
        if (auto* r = std::get_if<RemotePolicyConfig>(&c.policy)) r->url = url;
}

namespace {

std::string read_binary(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IOFailure("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

PromptSample prompt_from_json(const detail::json& j, const std::filesystem::path& base)
{
    using detail::required;
    PromptSample s;
    s.id = required<std::string>(j, "id");
    s.query = required<std::string>(j, "query");
    s.gold_answer = required<std::string>(j, "answer");
    if (j.contains("task_kind")) {
        const auto k = task_kind_from_string(required<std::string>(j, "task_kind"));
        if (!k) throw DecodeError("unknown task_kind");
        s.task_kind = *k;
    }
    if (j.contains("images")) {
        for (const auto& img : required<detail::json>(j, "images")) {
            std::string png;
            if (img.contains("png_base64")) {
                try {
                    png = base64_decode(required<std::string>(img, "png_base64"));
                } catch (const MediaError& e) {
                    throw DecodeError(std::string("images: ") + e.what());
                }
            } else if (img.contains("path")) {
                auto p = std::filesystem::path(required<std::string>(img, "path"));
                if (p.is_relative()) p = base / p;
                png = read_binary(p);
            } else {
                throw DecodeError("images: each entry needs 'path' or 'png_base64'");
            }
            if (!try_png_dimensions(png)) throw DecodeError("images: payload is not a PNG");
            s.image_hints.push_back(std::move(png));
        }
    }
    if (j.contains("video") && !j["video"].is_null()) {
        const auto& v = j["video"];
        VideoHint h;
        h.reference = required<std::string>(v, "path");
        h.frame_count = v.value("frames", 0);
        h.fps = v.value("fps", 0.0);
        h.duration_s = v.value("duration_s", h.fps > 0 ? h.frame_count / h.fps : 0.0);
        s.video = h;
    }
    const std::string mode = j.value("modality", s.video ? "video" : "image");
    const auto m = modality_from_string(mode);
    if (!m) throw DecodeError("unknown modality '" + mode + "'");
    s.modality = *m;
    if (!s.valid()) throw DecodeError("sample " + s.id + " is inconsistent with its modality");
    return s;
}

} // namespace

std::vector<PromptSample> load_prompt_file(const std::filesystem::path& path)
{
    std::vector<PromptSample> out;
    const auto base = path.parent_path();
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        try {
            detail::json j;
            try {
                j = detail::json::parse(line);
            } catch (const detail::json::exception& e) {
                throw DecodeError(e.what());
            }
            out.push_back(prompt_from_json(j, base));
        } catch (const DecodeError& e) {
            throw DecodeError(fmt::format("{}:{}: {}", path.string(), n, e.what()));
        } catch (const IOFailure& e) {
            throw DecodeError(fmt::format("{}:{}: {}", path.string(), n, e.what()));
        }
    }
    return out;
}

std::unique_ptr<Policy> make_policy(const RunConfig& c, std::span<const PromptSample> pool)
{
    if (const auto* r = std::get_if<RemotePolicyConfig>(&c.policy)) {
        RemotePolicyOptions o;
        o.base_url = r->url;
        o.model = r->model;
        o.api_key = api_key_from_env();
        o.max_connections = r->max_connections;
        o.max_retries = r->max_retries;
        o.request_timeout = std::chrono::milliseconds(r->request_timeout_ms);
        return std::make_unique<RemotePolicy>(std::move(o));
    }
    if (const auto* s = std::get_if<ScriptedPolicyConfig>(&c.policy))
        return std::make_unique<ScriptedPolicy>(load_scripted_policy(s->fixture));
    const auto& st = std::get<StochasticPolicyConfig>(c.policy);
    auto key = std::make_shared<std::map<std::string, std::string>>();
    for (const auto& p : pool) key->emplace(p.query, p.gold_answer);
    AnswerKey answer_key = [key](std::string_view q) -> std::optional<std::string> {
        const auto it = key->find(std::string(q));
        if (it == key->end()) return std::nullopt;
        return it->second;
    };
    return std::make_unique<StochasticPolicy>(stochastic_mock(linear_correctness(st.intercept, st.slope),
                                                              st.turn_weights, st.answer_pool, std::move(answer_key),
                                                              st.seed));
}

std::unique_ptr<Sandbox> make_sandbox(const RunConfig& c)
{
    if (const auto* h = std::get_if<HttpSandboxConfig>(&c.sandbox)) {
        HttpSandboxOptions o;
        o.base_url = h->url;
        o.max_retries = h->max_retries;
        return std::make_unique<HttpSandboxClient>(std::move(o));
    }
    const auto& f = std::get<FakeSandboxConfig>(c.sandbox);
    FakeSandboxOptions o;
    o.video_frames = f.video_frames;
    o.video_width = f.video_width;
    o.video_height = f.video_height;
    o.video_fps = f.video_fps;
    return std::make_unique<FakeSandbox>(std::move(o));
}

} // namespace pvrl
