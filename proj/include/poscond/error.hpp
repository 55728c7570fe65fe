// Copyright (C) 2026 The poscond Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace poscond {

enum class ErrorKind {
    EmptyText,
    TaggerUnavailable,
    AlignmentFailure,
    BackendFailure,
    NonDifferentiableTarget,
    NoPadToken,
    NonFiniteGradient,
    DegenerateDenominator,
    SpanMismatch,
    TextTooShort,
    FormatVersionMismatch,
    ChecksumMismatch,
    EmptyTensor,
    ZeroTotal,
    ZeroVariance,
    TooManyWindowFailures,
    StaleArtifact,
    ConfigError,
    IoError,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::EmptyText: return "EmptyText";
        case ErrorKind::TaggerUnavailable: return "TaggerUnavailable";
        case ErrorKind::AlignmentFailure: return "AlignmentFailure";
        case ErrorKind::BackendFailure: return "BackendFailure";
        case ErrorKind::NonDifferentiableTarget: return "NonDifferentiableTarget";
        case ErrorKind::NoPadToken: return "NoPadToken";
        case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorKind::DegenerateDenominator: return "DegenerateDenominator";
        case ErrorKind::SpanMismatch: return "SpanMismatch";
        case ErrorKind::TextTooShort: return "TextTooShort";
        case ErrorKind::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorKind::EmptyTensor: return "EmptyTensor";
        case ErrorKind::ZeroTotal: return "ZeroTotal";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::TooManyWindowFailures: return "TooManyWindowFailures";
        case ErrorKind::StaleArtifact: return "StaleArtifact";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace poscond
