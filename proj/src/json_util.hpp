/* Copyright 2026 The DIPE Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Internal helpers shared by the JSON-speaking modules.

#include "dipe/plan.hpp"
#include "json.hpp"

namespace dipe::detail {

nlohmann::json plan_to_value(const PositionPlan& plan);
PositionPlan plan_from_value(const nlohmann::json& value);
std::vector<ModalitySegment> segments_from_value(const nlohmann::json& value);

// Parses text, mapping syntax errors onto ParseError with the byte offset.
nlohmann::json parse_json(std::string_view text);

}  // namespace dipe::detail
