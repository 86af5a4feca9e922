// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lipcmd {

enum class Errc {
  ZeroVector,
  DimMismatch,
  EmptyInput,
  NonPositiveTau,
  InsufficientData,
  SingleClass,
  UninitializedReferences,
  UnknownUtterance,
  UnknownLabel,
  EmptyLabel,
  InvalidMode,
  InvalidConfig,
  IoError,
  SchemaVersionMismatch,
  CorruptEmbedding,
  IndexOutOfRange,
  TargetUnreachable,
  MissingCondition,
  Protocol,
};

/// Stable snake_case name, used as the `code` field of protocol errors.
std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace lipcmd
