#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pco {

enum class ErrorCode {
  // topology
  DisconnectedGraph,
  DelayOutOfRange,
  DuplicateEdge,
  SelfLoop,
  InvalidNode,
  LengthMismatch,
  CliqueExplosion,
  AmbiguousPartition,
  // pco_sync
  RefractoryWindowEmpty,
  InvalidConfig,
  EventStorm,
  NoHead,
  // pulse_sched
  InitRejectionExhausted,
  NotInClique,
  DegenerateClique,
  MissingPreReference,
  // spectral
  EigenNoConvergence,
  UnsupportedArrangement,
  AssumptionViolated,
  TooLargeForExactChromatic,
  // harness
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::DelayOutOfRange: return "DelayOutOfRange";
    case ErrorCode::DuplicateEdge: return "DuplicateEdge";
    case ErrorCode::SelfLoop: return "SelfLoop";
    case ErrorCode::InvalidNode: return "InvalidNode";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::CliqueExplosion: return "CliqueExplosion";
    case ErrorCode::AmbiguousPartition: return "AmbiguousPartition";
    case ErrorCode::RefractoryWindowEmpty: return "RefractoryWindowEmpty";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EventStorm: return "EventStorm";
    case ErrorCode::NoHead: return "NoHead";
    case ErrorCode::InitRejectionExhausted: return "InitRejectionExhausted";
    case ErrorCode::NotInClique: return "NotInClique";
    case ErrorCode::DegenerateClique: return "DegenerateClique";
    case ErrorCode::MissingPreReference: return "MissingPreReference";
    case ErrorCode::EigenNoConvergence: return "EigenNoConvergence";
    case ErrorCode::UnsupportedArrangement: return "UnsupportedArrangement";
    case ErrorCode::AssumptionViolated: return "AssumptionViolated";
    case ErrorCode::TooLargeForExactChromatic: return "TooLargeForExactChromatic";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pco
