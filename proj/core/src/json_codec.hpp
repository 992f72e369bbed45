#pragma once

#include "pvrl/protocol.hpp"
#include "pvrl/reward.hpp"
#include "pvrl/trajectory_io.hpp"

#include <nlohmann/json.hpp>

namespace pvrl::detail {

using json = nlohmann::json;

json clue_to_json(const ImageClue& clue);
ImageClue clue_from_json(const json& j);

json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const json& j);

json reward_to_json(const RewardRecord& r);
RewardRecord reward_from_json(const json& j);

/// Parses one record line and checks the schema version; wraps parse errors in DecodeError.
json parse_record(std::string_view line);

template <class T>
T required(const json& j, const char* key)
{
    const auto it = j.find(key);
    if (it == j.end()) throw DecodeError(std::string("missing field '") + key + "'");
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw DecodeError(std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace pvrl::detail
