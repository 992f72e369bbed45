#include "pvrl/protocol.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace pvrl {

namespace {

constexpr std::string_view kBoxed = "\\boxed{";

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string_view trim(std::string_view s)
{
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

// Returns the index one past the brace closing the one opened just before `from`, or npos.
std::size_t match_brace(std::string_view s, std::size_t from)
{
    int depth = 1;
    for (auto i = from; i < s.size(); ++i) {
        if (s[i] == '{') ++depth;
        else if (s[i] == '}' && --depth == 0) return i + 1;
    }
    return std::string_view::npos;
}

constexpr std::array<std::pair<BrokenReason, const char*>, 6> kBrokenNames{{
    {BrokenReason::ExecutionTimeout, "execution_timeout"},
    {BrokenReason::SandboxDeath, "sandbox_death"},
    {BrokenReason::ImageLimitExceeded, "image_limit_exceeded"},
    {BrokenReason::NoImageRendered, "no_image_rendered"},
    {BrokenReason::ContextOverflow, "context_overflow"},
    {BrokenReason::BackendFailure, "backend_failure"},
}};

constexpr std::array<std::pair<TaskKind, const char*>, 3> kTaskNames{{
    {TaskKind::MultipleChoice, "multiple_choice"},
    {TaskKind::Numeric, "numeric"},
    {TaskKind::FreeText, "free_text"},
}};

} // namespace

const char* to_string(BrokenReason reason)
{
    for (auto [r, name] : kBrokenNames)
        if (r == reason) return name;
    return "unknown";
}

std::optional<BrokenReason> broken_reason_from_string(std::string_view name)
{
    for (auto [r, n] : kBrokenNames)
        if (name == n) return r;
    return std::nullopt;
}

const char* to_string(TaskKind kind)
{
    for (auto [k, name] : kTaskNames)
        if (k == kind) return name;
    return "unknown";
}

std::optional<TaskKind> task_kind_from_string(std::string_view name)
{
    for (auto [k, n] : kTaskNames)
        if (name == n) return k;
    return std::nullopt;
}

const char* to_string(Modality mode)
{
    return mode == Modality::Image ? "image" : "video";
}

std::optional<Modality> modality_from_string(std::string_view name)
{
    if (name == "image") return Modality::Image;
    if (name == "video") return Modality::Video;
    return std::nullopt;
}

const char* to_string(Status status)
{
    switch (status) {
    case Status::Completed: return "completed";
    case Status::Unanswered: return "unanswered";
    case Status::Broken: return "broken";
    }
    return "unknown";
}

const FinalAnswer* Trajectory::final_answer() const
{
    if (segments_.empty()) return nullptr;
    return std::get_if<FinalAnswer>(&segments_.back());
}

void Trajectory::add_context_clue(ImageClue clue)
{
    if (clue.width < 1 || clue.height < 1 || clue.tokens < 1)
        throw InvariantViolation("image clue must have positive dimensions and token count");
    visual_tokens_ += clue.tokens;
    context_clues_.push_back(std::move(clue));
}

void Trajectory::append(Segment segment)
{
    if (status_ == Status::Completed) throw InvariantViolation("no segment may follow the final answer");
    if (status_ == Status::Broken) throw InvariantViolation("trajectory is already broken");

    std::visit(overloaded{
                   [](const Reasoning&) {},
                   [this](const CodeBlock& c) {
                       if (c.ordinal != next_ordinal_)
                           throw InvariantViolation("code block ordinal " + std::to_string(c.ordinal) +
                                                    " where " + std::to_string(next_ordinal_) + " was expected");
                       ++next_ordinal_;
                   },
                   [this](const InterpreterOutput& out) {
                       if (segments_.empty() || !std::holds_alternative<CodeBlock>(segments_.back()))
                           throw InvariantViolation("interpreter output must follow a code block");
                       for (const auto& clue : out.images)
                           if (clue.width < 1 || clue.height < 1 || clue.tokens < 1)
                               throw InvariantViolation("image clue must have positive dimensions and token count");
                       ++tool_calls_;
                       for (const auto& clue : out.images) visual_tokens_ += clue.tokens;
                   },
                   [this](const FinalAnswer&) { status_ = Status::Completed; },
               },
               segment);
    segments_.push_back(std::move(segment));
}

void Trajectory::mark_unanswered()
{
    if (status_ == Status::Completed) throw InvariantViolation("completed trajectory cannot become unanswered");
    status_ = Status::Unanswered;
    broken_reason_.reset();
}

void Trajectory::mark_broken(BrokenReason reason)
{
    if (status_ == Status::Completed) throw InvariantViolation("completed trajectory cannot become broken");
    status_ = Status::Broken;
    broken_reason_ = reason;
}

bool Trajectory::invariants_hold() const
{
    int calls = 0;
    int ordinal = 0;
    int answers = 0;
    std::int64_t visual = 0;
    for (const auto& c : context_clues_) visual += c.tokens;
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        const auto& s = segments_[i];
        if (const auto* code = std::get_if<CodeBlock>(&s)) {
            if (code->ordinal != ordinal++) return false;
        } else if (const auto* out = std::get_if<InterpreterOutput>(&s)) {
            if (i == 0 || !std::holds_alternative<CodeBlock>(segments_[i - 1])) return false;
            ++calls;
            for (const auto& c : out->images) visual += c.tokens;
        } else if (std::holds_alternative<FinalAnswer>(s)) {
            ++answers;
            if (i + 1 != segments_.size()) return false;
        }
    }
    if (answers > 1) return false;
    if ((status_ == Status::Completed) != (answers == 1)) return false;
    if ((status_ == Status::Broken) != broken_reason_.has_value()) return false;
    return calls == tool_calls_ && visual == visual_tokens_ && ordinal == next_ordinal_;
}

bool PromptSample::valid() const
{
    if (gold_answer.empty()) return false;
    if (modality == Modality::Image) return !image_hints.empty() && !video.has_value();
    return video.has_value() && image_hints.empty();
}

ParsedTurn parse_model_output(std::string_view text, int next_ordinal)
{
    ParsedTurn turn;
    const auto code_pos = text.find(kCodeOpen);
    const auto answer_pos = text.find(kAnswerOpen);
    if (code_pos == std::string_view::npos && answer_pos == std::string_view::npos) {
        if (!text.empty()) turn.segments.emplace_back(Reasoning{std::string(text)});
        return turn;
    }

    const bool code_first = code_pos < answer_pos;
    const auto open_pos = code_first ? code_pos : answer_pos;
    const auto open_tag = code_first ? kCodeOpen : kAnswerOpen;
    const auto close_tag = code_first ? kCodeClose : kAnswerClose;
    const auto body_pos = open_pos + open_tag.size();
    const auto close_pos = text.find(close_tag, body_pos);
    if (close_pos == std::string_view::npos)
        throw MalformedTags(std::string(open_tag) + " without matching " + std::string(close_tag));

    if (open_pos > 0) turn.segments.emplace_back(Reasoning{std::string(text.substr(0, open_pos))});
    const auto body = text.substr(body_pos, close_pos - body_pos);
    const auto rest = text.substr(close_pos + close_tag.size());

    if (code_first) {
        turn.segments.emplace_back(CodeBlock{std::string(body), next_ordinal});
        turn.needs_execution = true;
        const auto next_open = std::min(rest.find(kCodeOpen), rest.find(kAnswerOpen));
        const auto between = rest.substr(0, next_open);
        if (!between.empty()) turn.segments.emplace_back(Reasoning{std::string(between)});
        turn.dropped_trailing = next_open != std::string_view::npos;
    } else {
        turn.segments.emplace_back(FinalAnswer{std::string(body), extract_boxed_answer(body)});
        turn.dropped_trailing = !trim(rest).empty();
    }
    return turn;
}

std::string render_turn(std::span<const Segment> segments)
{
    std::string out;
    for (const auto& s : segments) {
        std::visit(overloaded{
                       [&](const Reasoning& r) { out += r.text; },
                       [&](const CodeBlock& c) {
                           out += kCodeOpen;
                           out += c.code;
                           out += kCodeClose;
                       },
                       [&](const InterpreterOutput& o) { out += interpreter_text(o); },
                       [&](const FinalAnswer& a) {
                           out += kAnswerOpen;
                           out += a.raw;
                           out += kAnswerClose;
                       },
                   },
                   s);
    }
    return out;
}

std::string extract_boxed_answer(std::string_view text)
{
    auto pos = text.rfind(kBoxed);
    while (pos != std::string_view::npos) {
        const auto body = pos + kBoxed.size();
        const auto end = match_brace(text, body);
        if (end != std::string_view::npos) {
            const auto content = text.substr(body, end - 1 - body);
            if (content.find(kBoxed) != std::string_view::npos) return extract_boxed_answer(content);
            return std::string(trim(content));
        }
        if (pos == 0) break;
        pos = text.rfind(kBoxed, pos - 1);
    }
    return std::string(trim(text));
}

Segment render_interpreter_segment(const ExecResult& result, const ClueTokenFn& clue_tokens)
{
    InterpreterOutput out;
    out.stdout_text = result.stdout_text;
    out.error = result.error.has_value();
    if (result.error && !result.error->empty() &&
        out.stdout_text.find(*result.error) == std::string::npos) {
        if (!out.stdout_text.empty() && out.stdout_text.back() != '\n') out.stdout_text += '\n';
        out.stdout_text += *result.error;
    }
    out.duration_ms = std::max<std::int64_t>(0, result.duration_ms);
    out.images.reserve(result.images.size());
    for (const auto& img : result.images) {
        out.images.push_back(ImageClue{
            .png = img.png,
            .width = img.width,
            .height = img.height,
            .source = ClueSource::Rendered,
            .tokens = std::max(1, clue_tokens(img.width, img.height)),
        });
    }
    return out;
}

std::string interpreter_text(const InterpreterOutput& out)
{
    std::string text(kInterpreterOpen);
    text += out.stdout_text;
    text += kInterpreterClose;
    return text;
}

std::string executable_source(std::string_view code)
{
    auto body = trim(code);
    if (body.starts_with("```")) {
        const auto nl = body.find('\n');
        body = nl == std::string_view::npos ? std::string_view{} : body.substr(nl + 1);
        if (body.ends_with("```")) body.remove_suffix(3);
    }
    return std::string(body);
}

} // namespace pvrl
