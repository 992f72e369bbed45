#pragma once

#include "pvrl/sandbox.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pvrl {

inline constexpr std::string_view kCodeOpen = "<code>";
inline constexpr std::string_view kCodeClose = "</code>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kInterpreterOpen = "<interpreter>";
inline constexpr std::string_view kInterpreterClose = "</interpreter>";

enum class ClueSource { Hint, Rendered };

struct ImageClue {
    std::string png;
    int width = 1;
    int height = 1;
    ClueSource source = ClueSource::Rendered;
    int tokens = 1;

    bool operator==(const ImageClue&) const = default;
};

struct Reasoning {
    std::string text;
    bool operator==(const Reasoning&) const = default;
};

struct CodeBlock {
    std::string code;
    int ordinal = 0;
    bool operator==(const CodeBlock&) const = default;
};

struct InterpreterOutput {
    std::string stdout_text;
    std::vector<ImageClue> images;
    bool error = false;
    std::int64_t duration_ms = 0;
    bool operator==(const InterpreterOutput&) const = default;
};

struct FinalAnswer {
    std::string raw;
    std::string extracted;
    bool operator==(const FinalAnswer&) const = default;
};

using Segment = std::variant<Reasoning, CodeBlock, InterpreterOutput, FinalAnswer>;

enum class BrokenReason {
    ExecutionTimeout,
    SandboxDeath,
    ImageLimitExceeded,
    NoImageRendered,
    ContextOverflow,
    BackendFailure,
};

const char* to_string(BrokenReason reason);
std::optional<BrokenReason> broken_reason_from_string(std::string_view name);

enum class TaskKind { MultipleChoice, Numeric, FreeText };
enum class Modality { Image, Video };

const char* to_string(TaskKind kind);
std::optional<TaskKind> task_kind_from_string(std::string_view name);
const char* to_string(Modality mode);
std::optional<Modality> modality_from_string(std::string_view name);

enum class Status { Completed, Unanswered, Broken };
const char* to_string(Status status);

class MalformedTags : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// One rollout. Mutations go through append()/mark_*() so that the derived fields
/// (tool-call count, visual tokens, status) cannot drift from the segment list.
class Trajectory {
public:
    Trajectory() = default;
    Trajectory(std::string id, std::string sample_id) : id_(std::move(id)), sample_id_(std::move(sample_id)) {}

    const std::string& id() const { return id_; }
    const std::string& sample_id() const { return sample_id_; }

    /// Gold answer and task kind are carried so logs can be graded standalone.
    const std::string& gold_answer() const { return gold_; }
    TaskKind task_kind() const { return task_kind_; }
    void set_grading(std::string gold, TaskKind kind)
    {
        gold_ = std::move(gold);
        task_kind_ = kind;
    }

    const std::vector<ImageClue>& context_clues() const { return context_clues_; }
    const std::vector<Segment>& segments() const { return segments_; }

    Status status() const { return status_; }
    std::optional<BrokenReason> broken_reason() const { return broken_reason_; }
    bool is_broken() const { return status_ == Status::Broken; }

    int tool_calls() const { return tool_calls_; }
    std::int64_t text_tokens() const { return text_tokens_; }
    std::int64_t visual_tokens() const { return visual_tokens_; }
    std::int64_t wall_ms() const { return wall_ms_; }

    /// Ordinal the next CodeBlock must carry.
    int next_code_ordinal() const { return next_ordinal_; }
    const FinalAnswer* final_answer() const;

    /// Hint clues injected into the policy context (image mode).
    void add_context_clue(ImageClue clue);
    /// Throws InvariantViolation if the segment would break the ordering rules.
    void append(Segment segment);
    void mark_unanswered();
    void mark_broken(BrokenReason reason);
    void add_text_tokens(std::int64_t tokens) { text_tokens_ += tokens; }
    void set_wall_ms(std::int64_t ms) { wall_ms_ = ms; }

    /// Recomputes derived fields from scratch and compares; for tests and selftest.
    bool invariants_hold() const;

    bool operator==(const Trajectory&) const = default;

private:
    std::string id_;
    std::string sample_id_;
    std::string gold_;
    TaskKind task_kind_ = TaskKind::FreeText;
    std::vector<ImageClue> context_clues_;
    std::vector<Segment> segments_;
    Status status_ = Status::Unanswered;
    std::optional<BrokenReason> broken_reason_;
    int tool_calls_ = 0;
    int next_ordinal_ = 0;
    std::int64_t text_tokens_ = 0;
    std::int64_t visual_tokens_ = 0;
    std::int64_t wall_ms_ = 0;
};

struct VideoHint {
    std::string reference;
    int frame_count = 0;
    double fps = 0.0;
    double duration_s = 0.0;
    bool operator==(const VideoHint&) const = default;
};

struct PromptSample {
    std::string id;
    std::string query;
    std::vector<std::string> image_hints; // PNG bytes
    std::optional<VideoHint> video;
    std::string gold_answer;
    TaskKind task_kind = TaskKind::FreeText;
    Modality modality = Modality::Image;

    bool valid() const;
    bool operator==(const PromptSample&) const = default;
};

struct ParsedTurn {
    std::vector<Segment> segments;
    bool needs_execution = false;
    /// True when a later tag span was discarded (second code block, text after an answer, ...).
    bool dropped_trailing = false;
};

/// Splits one completion into segments. First-match, case-sensitive, non-nested.
/// Throws MalformedTags when the winning opening tag has no closing tag.
ParsedTurn parse_model_output(std::string_view text, int next_ordinal = 0);

/// Inverse of parse_model_output for a single turn's segments.
std::string render_turn(std::span<const Segment> segments);

std::string extract_boxed_answer(std::string_view text);

using ClueTokenFn = std::function<int(int width, int height)>;

/// Converts a sandbox result into an InterpreterOutput. stdout is used verbatim;
/// truncation is the scaffold's concern.
Segment render_interpreter_segment(const ExecResult& result, const ClueTokenFn& clue_tokens);

/// "<interpreter>stdout</interpreter>", the text the policy sees for an execution.
std::string interpreter_text(const InterpreterOutput& out);

/// Strips a surrounding markdown fence (```python ... ```) from a code block.
std::string executable_source(std::string_view code);

} // namespace pvrl
