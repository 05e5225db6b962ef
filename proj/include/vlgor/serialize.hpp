#pragma once

#include "json.hpp"
#include "vlgor/lang.hpp"

namespace vlgor::data {

nlohmann::json goal_to_json(const lang::StructuredGoal& g);
lang::StructuredGoal goal_from_json(const nlohmann::json& j);

// Instructions embed their goal so a list of them is self-contained.
nlohmann::json instruction_to_json(const lang::Instruction& ins);
lang::Instruction instruction_from_json(const nlohmann::json& j);

}  // namespace vlgor::data
