#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vibetune {

enum class Errc {
  EmptyDocument,
  MalformedSection,
  UnknownAgent,
  DeadRecipient,
  Unauthorized,
  RosterLimitExceeded,
  TerminatedAgent,
  DuplicateVersion,
  UnknownVersion,
  IllegalTransition,
  ExhaustedSpace,
  NegativeInput,
  NonPositiveDim,
  NonPositivePeak,
  ShapeMismatch,
  ResourceOverflow,
  UnknownParams,
  BuildFailed,
  RunFailed,
  MetricParseError,
  TransferFailed,
  SubmitRejected,
  PollTimeout,
  FetchFailed,
  StorageFailure,
  DirNotEmpty,
  ConfigInvalid,
  FixtureParseError,
  NotAProject,
  InvalidDecimal,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::EmptyDocument: return "EmptyDocument";
    case Errc::MalformedSection: return "MalformedSection";
    case Errc::UnknownAgent: return "UnknownAgent";
    case Errc::DeadRecipient: return "DeadRecipient";
    case Errc::Unauthorized: return "Unauthorized";
    case Errc::RosterLimitExceeded: return "RosterLimitExceeded";
    case Errc::TerminatedAgent: return "TerminatedAgent";
    case Errc::DuplicateVersion: return "DuplicateVersion";
    case Errc::UnknownVersion: return "UnknownVersion";
    case Errc::IllegalTransition: return "IllegalTransition";
    case Errc::ExhaustedSpace: return "ExhaustedSpace";
    case Errc::NegativeInput: return "NegativeInput";
    case Errc::NonPositiveDim: return "NonPositiveDim";
    case Errc::NonPositivePeak: return "NonPositivePeak";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::ResourceOverflow: return "ResourceOverflow";
    case Errc::UnknownParams: return "UnknownParams";
    case Errc::BuildFailed: return "BuildFailed";
    case Errc::RunFailed: return "RunFailed";
    case Errc::MetricParseError: return "MetricParseError";
    case Errc::TransferFailed: return "TransferFailed";
    case Errc::SubmitRejected: return "SubmitRejected";
    case Errc::PollTimeout: return "PollTimeout";
    case Errc::FetchFailed: return "FetchFailed";
    case Errc::StorageFailure: return "StorageFailure";
    case Errc::DirNotEmpty: return "DirNotEmpty";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::FixtureParseError: return "FixtureParseError";
    case Errc::NotAProject: return "NotAProject";
    case Errc::InvalidDecimal: return "InvalidDecimal";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace vibetune
