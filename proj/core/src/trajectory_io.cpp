#include "pvrl/trajectory_io.hpp"

#include "json_codec.hpp"
#include "pvrl/media.hpp"

#include <fstream>

namespace pvrl {

namespace detail {

json clue_to_json(const ImageClue& clue)
{
    return {
        {"png_base64", base64_encode(clue.png)},
        {"width", clue.width},
        {"height", clue.height},
        {"source", clue.source == ClueSource::Hint ? "hint" : "rendered"},
        {"tokens", clue.tokens},
    };
}

ImageClue clue_from_json(const json& j)
{
    ImageClue clue;
    try {
        clue.png = base64_decode(required<std::string>(j, "png_base64"));
    } catch (const MediaError& e) {
        throw DecodeError(std::string("image clue payload: ") + e.what());
    }
    clue.width = required<int>(j, "width");
    clue.height = required<int>(j, "height");
    const auto source = required<std::string>(j, "source");
    if (source == "hint") clue.source = ClueSource::Hint;
    else if (source == "rendered") clue.source = ClueSource::Rendered;
    else throw DecodeError("image clue source must be 'hint' or 'rendered'");
    clue.tokens = required<int>(j, "tokens");
    if (clue.width < 1 || clue.height < 1 || clue.tokens < 1) throw DecodeError("image clue with non-positive size");
    return clue;
}

namespace {

json segment_to_json(const Segment& s)
{
    if (const auto* r = std::get_if<Reasoning>(&s)) return {{"type", "reasoning"}, {"text", r->text}};
    if (const auto* c = std::get_if<CodeBlock>(&s)) return {{"type", "code"}, {"code", c->code}, {"ordinal", c->ordinal}};
    if (const auto* o = std::get_if<InterpreterOutput>(&s)) {
        json images = json::array();
        for (const auto& clue : o->images) images.push_back(clue_to_json(clue));
        return {{"type", "interpreter"},
                {"stdout", o->stdout_text},
                {"images", std::move(images)},
                {"error", o->error},
                {"duration_ms", o->duration_ms}};
    }
    const auto& a = std::get<FinalAnswer>(s);
    return {{"type", "answer"}, {"raw", a.raw}, {"extracted", a.extracted}};
}

Segment segment_from_json(const json& j)
{
    const auto type = required<std::string>(j, "type");
    if (type == "reasoning") return Reasoning{required<std::string>(j, "text")};
    if (type == "code") return CodeBlock{required<std::string>(j, "code"), required<int>(j, "ordinal")};
    if (type == "interpreter") {
        InterpreterOutput o;
        o.stdout_text = required<std::string>(j, "stdout");
        for (const auto& clue : required<json>(j, "images")) o.images.push_back(clue_from_json(clue));
        o.error = required<bool>(j, "error");
        o.duration_ms = required<std::int64_t>(j, "duration_ms");
        return o;
    }
    if (type == "answer") return FinalAnswer{required<std::string>(j, "raw"), required<std::string>(j, "extracted")};
    throw DecodeError("unknown segment type '" + type + "'");
}

} // namespace

json trajectory_to_json(const Trajectory& t)
{
    json clues = json::array();
    for (const auto& c : t.context_clues()) clues.push_back(clue_to_json(c));
    json segments = json::array();
    for (const auto& s : t.segments()) segments.push_back(segment_to_json(s));
    json j = {
        {"id", t.id()},
        {"sample_id", t.sample_id()},
        {"gold", t.gold_answer()},
        {"task_kind", to_string(t.task_kind())},
        {"status", to_string(t.status())},
        {"broken_reason", t.broken_reason() ? json(to_string(*t.broken_reason())) : json(nullptr)},
        {"n_tc", t.tool_calls()},
        {"text_tokens", t.text_tokens()},
        {"visual_tokens", t.visual_tokens()},
        {"wall_ms", t.wall_ms()},
        {"context_clues", std::move(clues)},
        {"segments", std::move(segments)},
    };
    return j;
}

Trajectory trajectory_from_json(const json& j)
{
    if (!j.is_object()) throw DecodeError("trajectory must be a JSON object");
    Trajectory t(required<std::string>(j, "id"), required<std::string>(j, "sample_id"));
    const auto kind = task_kind_from_string(required<std::string>(j, "task_kind"));
    if (!kind) throw DecodeError("unknown task_kind");
    t.set_grading(required<std::string>(j, "gold"), *kind);

    try {
        for (const auto& c : required<json>(j, "context_clues")) t.add_context_clue(clue_from_json(c));
        for (const auto& s : required<json>(j, "segments")) t.append(segment_from_json(s));

        const auto status = required<std::string>(j, "status");
        const auto reason_field = j.find("broken_reason");
        if (status == "broken") {
            if (reason_field == j.end() || !reason_field->is_string()) throw DecodeError("broken status without reason");
            const auto reason = broken_reason_from_string(reason_field->get<std::string>());
            if (!reason) throw DecodeError("unknown broken_reason");
            t.mark_broken(*reason);
        } else if (status == "unanswered") {
            t.mark_unanswered();
        } else if (status == "completed") {
            if (t.status() != Status::Completed) throw DecodeError("status 'completed' without a final answer");
        } else {
            throw DecodeError("unknown status '" + status + "'");
        }
        if (status != "broken" && reason_field != j.end() && !reason_field->is_null())
            throw DecodeError("broken_reason set on a non-broken trajectory");
    } catch (const InvariantViolation& e) {
        throw DecodeError(std::string("trajectory violates invariants: ") + e.what());
    }

    if (required<int>(j, "n_tc") != t.tool_calls()) throw DecodeError("n_tc disagrees with segments");
    if (required<std::int64_t>(j, "visual_tokens") != t.visual_tokens())
        throw DecodeError("visual_tokens disagrees with image clues");
    t.add_text_tokens(required<std::int64_t>(j, "text_tokens"));
    t.set_wall_ms(required<std::int64_t>(j, "wall_ms"));
    return t;
}

json reward_to_json(const RewardRecord& r)
{
    return {{"r_acc", r.r_acc}, {"n_tc", r.n_tc}, {"tool_bonus", r.tool_bonus}, {"total", r.total}};
}

RewardRecord reward_from_json(const json& j)
{
    RewardRecord r;
    r.r_acc = required<int>(j, "r_acc");
    r.n_tc = required<int>(j, "n_tc");
    r.tool_bonus = required<double>(j, "tool_bonus");
    r.total = required<double>(j, "total");
    if (r.r_acc != 0 && r.r_acc != 1) throw DecodeError("r_acc must be 0 or 1");
    return r;
}

json parse_record(std::string_view line)
{
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw DecodeError(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) throw DecodeError("record must be a JSON object");
    const auto v = required<int>(j, "v");
    if (v != kSchemaVersion) throw DecodeError("unsupported schema version " + std::to_string(v));
    return j;
}

} // namespace detail

std::string serialize_trajectory(const Trajectory& trajectory, const std::optional<RewardRecord>& reward)
{
    auto j = detail::trajectory_to_json(trajectory);
    j["v"] = kSchemaVersion;
    if (reward) j["reward"] = detail::reward_to_json(*reward);
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

TrajectoryRecord deserialize_trajectory_record(std::string_view line)
{
    const auto j = detail::parse_record(line);
    TrajectoryRecord rec{detail::trajectory_from_json(j), std::nullopt};
    if (const auto it = j.find("reward"); it != j.end() && !it->is_null()) rec.reward = detail::reward_from_json(*it);
    return rec;
}

Trajectory deserialize_trajectory(std::string_view line)
{
    return deserialize_trajectory_record(line).trajectory;
}

std::vector<std::string> read_lines(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IOFailure("cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(std::move(line));
    }
    return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IOFailure("cannot write " + path.string());
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw IOFailure("write failed for " + path.string());
}

void write_trajectory_log(const std::filesystem::path& path, std::span<const TrajectoryRecord> records)
{
    std::vector<std::string> lines;
    lines.reserve(records.size());
    for (const auto& r : records) lines.push_back(serialize_trajectory(r.trajectory, r.reward));
    write_lines(path, lines);
}

std::vector<TrajectoryRecord> read_trajectory_log(const std::filesystem::path& path)
{
    std::vector<TrajectoryRecord> out;
    std::size_t n = 0;
    for (const auto& line : read_lines(path)) {
        ++n;
        try {
            out.push_back(deserialize_trajectory_record(line));
        } catch (const DecodeError& e) {
            throw DecodeError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

} // namespace pvrl
