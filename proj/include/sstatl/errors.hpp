#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sstatl {

enum class Errc {
    bad_magic,
    truncated,
    dimension_overflow,
    trailing_bytes,
    non_finite,
    invalid_header,
    io,
    shape_mismatch,
    invalid_argument,
    out_of_range,
    numerical,
};

std::string_view to_string(Errc code);

/// Library error. The code identifies the failure class so callers can map it
/// onto exit codes or retry policies without string matching.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

inline std::string_view to_string(Errc code) {
    switch (code) {
    case Errc::bad_magic: return "bad magic";
    case Errc::truncated: return "truncated";
    case Errc::dimension_overflow: return "dimension overflow";
    case Errc::trailing_bytes: return "trailing bytes";
    case Errc::non_finite: return "non-finite value";
    case Errc::invalid_header: return "invalid header";
    case Errc::io: return "i/o error";
    case Errc::shape_mismatch: return "shape mismatch";
    case Errc::invalid_argument: return "invalid argument";
    case Errc::out_of_range: return "out of range";
    case Errc::numerical: return "numerical failure";
    }
    return "unknown";
}

}  // namespace sstatl
