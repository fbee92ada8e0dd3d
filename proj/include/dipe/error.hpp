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

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace dipe {

// Every library failure carries a short machine-readable code
// ("dim_mismatch", "bad_partition", "bad_grid", "empty_sequence",
// "parse_error", "plan_mismatch", "bad_config", "bad_spec").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// JSON / text input that could not be parsed. byte_offset is set for
// syntax errors, where the parser knows the position.
class ParseError : public Error {
 public:
  ParseError(const std::string& message,
             std::optional<std::size_t> byte_offset = std::nullopt)
      : Error("parse_error",
              byte_offset ? message + " (at byte " +
                                std::to_string(*byte_offset) + ")"
                          : message),
        byte_offset_(byte_offset) {}

  std::optional<std::size_t> byte_offset() const { return byte_offset_; }

 private:
  std::optional<std::size_t> byte_offset_;
};

}  // namespace dipe
