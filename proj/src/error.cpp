// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/error.hpp"

namespace lipcmd {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::ZeroVector: return "zero_vector";
    case Errc::DimMismatch: return "dim_mismatch";
    case Errc::EmptyInput: return "empty_input";
    case Errc::NonPositiveTau: return "non_positive_tau";
    case Errc::InsufficientData: return "insufficient_data";
    case Errc::SingleClass: return "single_class";
    case Errc::UninitializedReferences: return "uninitialized_references";
    case Errc::UnknownUtterance: return "unknown_utterance";
    case Errc::UnknownLabel: return "unknown_label";
    case Errc::EmptyLabel: return "empty_label";
    case Errc::InvalidMode: return "invalid_mode";
    case Errc::InvalidConfig: return "invalid_config";
    case Errc::IoError: return "io_error";
    case Errc::SchemaVersionMismatch: return "schema_version_mismatch";
    case Errc::CorruptEmbedding: return "corrupt_embedding";
    case Errc::IndexOutOfRange: return "index_out_of_range";
    case Errc::TargetUnreachable: return "target_unreachable";
    case Errc::MissingCondition: return "missing_condition";
    case Errc::Protocol: return "protocol";
  }
  return "unknown";
}

}  // namespace lipcmd
