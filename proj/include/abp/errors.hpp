// Copyright 2026 The ABP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ABP_ERRORS_HPP
#define ABP_ERRORS_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace abp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or network shapes that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value or key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed file content. Carries the byte offset where parsing failed.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Stage II ran out of prunable blocks before reaching its target.
class PruningExhausted : public Error {
public:
    using Error::Error;
};

}  // namespace abp

#endif  // ABP_ERRORS_HPP
