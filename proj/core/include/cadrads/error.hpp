// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cadrads {

// Error classes map 1:1 onto CLI exit codes.
enum class ErrorCode : int {
    Usage = 1,    // bad flags, malformed config, unknown keys
    Data = 2,     // missing/invalid files, contract violations in inputs
    Numeric = 3,  // NaN/Inf or other numerical failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, std::string stage, const std::string& message)
        : std::runtime_error(message), code_(code), stage_(std::move(stage)) {}

    ErrorCode code() const { return code_; }
    const std::string& stage() const { return stage_; }

private:
    ErrorCode code_;
    std::string stage_;
};

inline Error usage_error(const std::string& stage, const std::string& msg) {
    return Error(ErrorCode::Usage, stage, msg);
}
inline Error data_error(const std::string& stage, const std::string& msg) {
    return Error(ErrorCode::Data, stage, msg);
}
inline Error numeric_error(const std::string& stage, const std::string& msg) {
    return Error(ErrorCode::Numeric, stage, msg);
}

}  // namespace cadrads
