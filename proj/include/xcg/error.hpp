#pragma once

#include <stdexcept>
#include <string>

namespace xcg {

/// Error raised by every xcg operation. `code` is a short machine-readable
/// category (e.g. "schema", "precondition") used by the CLI error JSON.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

inline void require(bool condition, const char* code, const std::string& message) {
    if (!condition) throw Error(code, message);
}

}  // namespace xcg
