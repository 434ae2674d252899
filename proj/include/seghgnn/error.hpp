#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seghgnn {

enum class ErrorCode {
    dimension,
    invalid_argument,
    invalid_tangent,
    overflow,
    not_on_manifold,
    out_of_ball,
    out_of_model,
    empty_aggregation,
    invalid_feature,
    retraction_failure,
    degenerate_graph,
    non_finite,
    diverged,
    insufficient_foreground,
    too_large,
    empty_input,
    shape_mismatch,
    bad_magic,
    bad_version,
    bad_header,
    length_mismatch,
    io,
    parse,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::dimension: return "dimension error";
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::invalid_tangent: return "invalid tangent vector";
    case ErrorCode::overflow: return "overflow";
    case ErrorCode::not_on_manifold: return "point not on manifold";
    case ErrorCode::out_of_ball: return "point outside Poincare ball";
    case ErrorCode::out_of_model: return "point outside Klein model";
    case ErrorCode::empty_aggregation: return "empty aggregation";
    case ErrorCode::invalid_feature: return "invalid feature";
    case ErrorCode::retraction_failure: return "retraction failure";
    case ErrorCode::degenerate_graph: return "degenerate graph";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::diverged: return "training diverged";
    case ErrorCode::insufficient_foreground: return "insufficient foreground";
    case ErrorCode::too_large: return "input too large";
    case ErrorCode::empty_input: return "empty input";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::bad_version: return "unsupported version";
    case ErrorCode::bad_header: return "bad header";
    case ErrorCode::length_mismatch: return "length mismatch";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::parse: return "parse error";
    }
    return "unknown error";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace seghgnn
