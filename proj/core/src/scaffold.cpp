#include "pvrl/scaffold.hpp"

#include "pvrl/prompts.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace pvrl {

namespace {

constexpr std::string_view kTruncationMarker = "\n... [output truncated]\n";

std::int64_t ceil_div(std::int64_t a, std::int64_t b)
{
    return (a + b - 1) / b;
}

// Closes the session on scope exit, once.
class SessionGuard {
public:
    SessionGuard(Sandbox& sandbox, SessionId id) : sandbox_(sandbox), id_(std::move(id)) {}
    SessionGuard(const SessionGuard&) = delete;
    SessionGuard& operator=(const SessionGuard&) = delete;
    ~SessionGuard() { sandbox_.close_session(id_); }

private:
    Sandbox& sandbox_;
    SessionId id_;
};

} // namespace

std::string ScaffoldConfig::validation_error() const
{
    if (max_turns < 1) return "max_turns: must be >= 1";
    if (max_context_tokens < 1) return "max_context_tokens: must be positive";
    if (code_timeout.count() < 1) return "code_timeout_ms: must be positive";
    if (max_images_per_exec < 1) return "max_images_per_exec: must be positive";
    if (max_rendered_edge < 1) return "max_rendered_edge: must be positive";
    if (patch_px < 1) return "patch_px: must be positive";
    if (merge_factor < 1) return "merge_factor: must be positive";
    if (min_pixels < 1) return "min_pixels: must be positive";
    if (max_pixels < 1) return "max_pixels: must be positive";
    if (min_pixels >= max_pixels) return "min_pixels: must be smaller than max_pixels";
    if (max_stdout_bytes < 1) return "max_stdout_bytes: must be positive";
    return {};
}

PixelSize resize_to_bounds(int width, int height, std::int64_t min_pixels, std::int64_t max_pixels, int patch)
{
    if (width < 1 || height < 1) throw std::invalid_argument("resize_to_bounds: dimensions must be >= 1");
    const std::int64_t area = std::int64_t(width) * height;
    if (area >= min_pixels && area <= max_pixels) return {width, height};

    const double target = static_cast<double>(area > max_pixels ? max_pixels : min_pixels);
    const double scale = std::sqrt(target / static_cast<double>(area));
    const double aspect = static_cast<double>(width) / height;
    const std::int64_t cell = std::int64_t(patch) * patch;

    double best_score = std::numeric_limits<double>::infinity();
    PixelSize best{patch, patch};
    const auto consider = [&](std::int64_t kw, std::int64_t kh) {
        if (kw < 1 || kh < 1) return;
        const auto product = kw * kh * cell;
        if (product < min_pixels || product > max_pixels) return;
        const double ratio_err = std::abs((static_cast<double>(kw) / kh) / aspect - 1.0);
        // Aspect error beyond 2% dominates; within it, stay close to the violated bound.
        const double score = 100.0 * std::max(0.0, ratio_err - 0.02) + ratio_err +
                             std::abs(std::log(static_cast<double>(product) / target));
        if (score < best_score) {
            best_score = score;
            best = {static_cast<int>(kw * patch), static_cast<int>(kh * patch)};
        }
    };
    // Walk one side in patches (near its scaled length, plus the thinnest options) and derive
    // the other from the aspect ratio; then the same with the roles swapped.
    const auto side_candidates = [&](double scaled) {
        std::vector<std::int64_t> ks{1, 2, 3};
        const auto c = static_cast<std::int64_t>(std::floor(scaled / patch));
        for (auto k = c - 2; k <= c + 3; ++k) ks.push_back(k);
        return ks;
    };
    for (auto kh : side_candidates(height * scale)) {
        const double ideal = static_cast<double>(kh) * aspect;
        for (auto kw : {std::floor(ideal), std::ceil(ideal)}) consider(static_cast<std::int64_t>(kw), kh);
        if (kh >= 1) {
            consider(std::max<std::int64_t>(1, ceil_div(min_pixels, kh * cell)), kh);
            consider(max_pixels / (kh * cell), kh);
        }
    }
    for (auto kw : side_candidates(width * scale)) {
        const double ideal = static_cast<double>(kw) / aspect;
        for (auto kh : {std::floor(ideal), std::ceil(ideal)}) consider(kw, static_cast<std::int64_t>(kh));
        if (kw >= 1) {
            consider(kw, std::max<std::int64_t>(1, ceil_div(min_pixels, kw * cell)));
            consider(kw, max_pixels / (kw * cell));
        }
    }
    return best;
}

int estimate_visual_tokens(int width, int height, int patch, int merge)
{
    if (width < 1 || height < 1 || patch < 1 || merge < 1)
        throw std::invalid_argument("estimate_visual_tokens: arguments must be >= 1");
    const auto grid = ceil_div(width, patch) * ceil_div(height, patch);
    return static_cast<int>(std::max<std::int64_t>(1, ceil_div(grid, std::int64_t(merge) * merge)));
}

int hint_clue_tokens(const ScaffoldConfig& cfg, int width, int height)
{
    const auto sized = resize_to_bounds(width, height, cfg.min_pixels, cfg.max_pixels, cfg.patch_px);
    return estimate_visual_tokens(sized.width, sized.height, cfg.patch_px, cfg.merge_factor);
}

int rendered_clue_tokens(const ScaffoldConfig& cfg, int width, int height)
{
    const int edge = std::max(width, height);
    if (edge > cfg.max_rendered_edge) {
        const double s = static_cast<double>(cfg.max_rendered_edge) / edge;
        width = std::max(1, static_cast<int>(std::lround(width * s)));
        height = std::max(1, static_cast<int>(std::lround(height * s)));
    }
    return hint_clue_tokens(cfg, width, height);
}

std::int64_t estimate_text_tokens(std::string_view text)
{
    return ceil_div(static_cast<std::int64_t>(text.size()), 4);
}

std::int64_t context_tokens(std::span<const PolicyMessage> messages)
{
    std::int64_t total = 0;
    for (const auto& m : messages) {
        for (const auto& part : m.parts) {
            if (const auto* text = std::get_if<std::string>(&part)) total += estimate_text_tokens(*text);
            else total += std::get<ImageClue>(part).tokens;
        }
    }
    return total;
}

InitialContext assemble_initial_context(const PromptSample& sample, const ScaffoldConfig& cfg)
{
    InitialContext ctx;
    PolicyMessage system{Role::System, {}};

    if (sample.modality == Modality::Image) {
        if (sample.image_hints.empty() || sample.video)
            throw UnsupportedModality("image sample '" + sample.id + "' needs image hints and no video");
        std::vector<PixelSize> sizes;
        for (const auto& png : sample.image_hints) {
            try {
                sizes.push_back(png_dimensions(png));
            } catch (const MediaError& e) {
                throw UnsupportedModality("image hint of sample '" + sample.id + "' is not a PNG: " + e.what());
            }
        }
        system.parts.emplace_back(render_image_system_prompt(sizes.front().width, sizes.front().height, sample.query));
        for (std::size_t i = 0; i < sample.image_hints.size(); ++i) {
            ImageClue clue{
                .png = sample.image_hints[i],
                .width = sizes[i].width,
                .height = sizes[i].height,
                .source = ClueSource::Hint,
                .tokens = hint_clue_tokens(cfg, sizes[i].width, sizes[i].height),
            };
            system.parts.emplace_back(clue);
            ctx.hint_clues.push_back(std::move(clue));
            ctx.sandbox_init.images.push_back(sample.image_hints[i]);
        }
    } else {
        if (!sample.video || !sample.image_hints.empty())
            throw UnsupportedModality("video sample '" + sample.id + "' needs a video hint and no images");
        system.parts.emplace_back(render_video_system_prompt(format_video_info(*sample.video), sample.query));
        ctx.sandbox_init.video = VideoPreload{sample.video->reference, sample.video->frame_count};
    }
    ctx.sandbox_init.caps.max_images_per_exec = cfg.max_images_per_exec;
    ctx.messages.push_back(std::move(system));
    return ctx;
}

BrokenReason broken_reason_for(SandboxErrorKind kind)
{
    switch (kind) {
    case SandboxErrorKind::Timeout: return BrokenReason::ExecutionTimeout;
    case SandboxErrorKind::ImageLimitExceeded: return BrokenReason::ImageLimitExceeded;
    case SandboxErrorKind::Unreachable: return BrokenReason::BackendFailure;
    case SandboxErrorKind::SessionDead:
    case SandboxErrorKind::InitFailure:
    case SandboxErrorKind::BadResponse: return BrokenReason::SandboxDeath;
    }
    return BrokenReason::SandboxDeath;
}

ClockMs steady_clock_ms()
{
    return [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now().time_since_epoch())
            .count();
    };
}

Trajectory run_episode(const PromptSample& sample, Policy& policy, Sandbox& sandbox, const ScaffoldConfig& cfg,
                       const EpisodeOptions& options)
{
    const auto started = options.clock();
    Trajectory traj(options.trajectory_id, sample.id);
    traj.set_grading(sample.gold_answer, sample.task_kind);

    auto ctx = assemble_initial_context(sample, cfg);
    for (const auto& clue : ctx.hint_clues) traj.add_context_clue(clue);

    const auto finish = [&](Trajectory& t) -> Trajectory {
        t.set_wall_ms(options.clock() - started);
        return std::move(t);
    };

    EpisodeState state;
    try {
        state.session = sandbox.create_session(ctx.sandbox_init);
    } catch (const SandboxError& e) {
        spdlog::warn("episode {}: sandbox session failed: {}", options.trajectory_id, e.what());
        traj.mark_broken(broken_reason_for(e.kind()));
        return finish(traj);
    }
    SessionGuard guard(sandbox, state.session);

    state.messages = std::move(ctx.messages);
    for (const auto& m : state.messages)
        for (const auto& part : m.parts) {
            if (const auto* text = std::get_if<std::string>(&part)) state.text_tokens += estimate_text_tokens(*text);
            else state.visual_tokens += std::get<ImageClue>(part).tokens;
        }

    auto params = options.params;
    params.seed = options.seed;
    const auto clue_tokens = [&cfg](int w, int h) { return rendered_clue_tokens(cfg, w, h); };

    while (true) {
        if (state.text_tokens + state.visual_tokens > cfg.max_context_tokens) {
            traj.mark_unanswered();
            break;
        }

        ParsedTurn turn;
        bool parsed = false;
        bool backend_failed = false;
        for (int attempt = 0; attempt < 2 && !parsed && !backend_failed; ++attempt) {
            try {
                const auto gen = policy.generate(state.messages, params);
                turn = parse_model_output(gen.text, traj.next_code_ordinal());
                parsed = true;
            } catch (const PolicyError& e) {
                spdlog::warn("episode {}: policy backend failed: {}", options.trajectory_id, e.what());
                backend_failed = true;
            } catch (const MalformedTags& e) {
                spdlog::debug("episode {}: malformed completion (attempt {}): {}", options.trajectory_id, attempt + 1,
                              e.what());
            }
        }
        if (!parsed) {
            traj.mark_broken(BrokenReason::BackendFailure);
            break;
        }
        if (turn.dropped_trailing)
            spdlog::warn("episode {}: discarded content after the first tag span", options.trajectory_id);

        const auto assistant_text = render_turn(turn.segments);
        const auto assistant_tokens = estimate_text_tokens(assistant_text);
        state.text_tokens += assistant_tokens;
        traj.add_text_tokens(assistant_tokens);
        state.messages.push_back(PolicyMessage{Role::Assistant, {assistant_text}});

        const CodeBlock* code = nullptr;
        for (auto& seg : turn.segments) {
            traj.append(seg);
            if (std::holds_alternative<CodeBlock>(seg)) code = &std::get<CodeBlock>(traj.segments().back());
        }
        if (traj.status() == Status::Completed) break;
        if (!turn.needs_execution || state.turns_used >= cfg.max_turns) {
            traj.mark_unanswered();
            break;
        }

        // `code` points into traj's storage; copy before appending more segments.
        const auto source = executable_source(code->code);
        ExecResult result;
        try {
            result = sandbox.execute(state.session, source, cfg.code_timeout);
        } catch (const SandboxError& e) {
            spdlog::debug("episode {}: execution failed: {}", options.trajectory_id, e.what());
            traj.mark_broken(broken_reason_for(e.kind()));
            break;
        }
        if (static_cast<int>(result.images.size()) > cfg.max_images_per_exec) {
            traj.mark_broken(BrokenReason::ImageLimitExceeded);
            break;
        }
        if (sample.modality == Modality::Video && result.display_hook_invoked && result.images.empty()) {
            traj.mark_broken(BrokenReason::NoImageRendered);
            break;
        }
        if (result.stdout_text.size() > cfg.max_stdout_bytes) {
            std::string cut(utf8_prefix(result.stdout_text, cfg.max_stdout_bytes));
            cut += kTruncationMarker;
            result.stdout_text = std::move(cut);
        }

        auto segment = render_interpreter_segment(result, clue_tokens);
        const auto& out = std::get<InterpreterOutput>(segment);
        PolicyMessage tool{Role::ToolResult, {interpreter_text(out)}};
        const auto tool_tokens = estimate_text_tokens(std::get<std::string>(tool.parts.front()));
        for (const auto& clue : out.images) {
            tool.parts.emplace_back(clue);
            state.visual_tokens += clue.tokens;
        }
        state.text_tokens += tool_tokens;
        traj.add_text_tokens(tool_tokens);
        traj.append(std::move(segment));
        state.messages.push_back(std::move(tool));
        ++state.turns_used;
    }
    return finish(traj);
}

} // namespace pvrl
