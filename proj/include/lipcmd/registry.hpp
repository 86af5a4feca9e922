// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lipcmd/classifier.hpp"
#include "lipcmd/kws.hpp"

namespace lipcmd {

enum class LearningMode { Initialization, Register, ActiveLearning, OnDemand };

std::string_view to_string(LearningMode mode) noexcept;
LearningMode parse_mode(std::string_view text);  // throws Errc::InvalidMode

struct CommandEntry {
  std::string label;
  std::vector<LabeledSample> samples;

  friend bool operator==(const CommandEntry&, const CommandEntry&) = default;
};

struct KeywordStore {
  std::string label = "keyword";
  std::vector<UnitEmbedding> positives;
  std::vector<UnitEmbedding> negatives;  // reported misactivations
  std::vector<UnitEmbedding> non_speaking;

  friend bool operator==(const KeywordStore&, const KeywordStore&) = default;
};

struct PendingUtterance {
  std::uint64_t utterance_id = 0;
  UnitEmbedding embedding;
  Prediction prediction;
  bool resolved = false;
};

/// User verdict on a prediction: confirm it, or name the correct label.
struct Feedback {
  std::optional<std::string> corrected_label;  // nullopt = confirm

  static Feedback confirm() { return {}; }
  static Feedback correct(std::string label) { return {std::move(label)}; }
};

struct RetrainResult {
  std::shared_ptr<const LinearClassifier> classifier;
  std::chrono::duration<double, std::milli> duration{};
};

inline constexpr int kRegistrySchemaVersion = 1;

/// Persistent customization state of one user: commands and their samples,
/// the keyword model data, and the current learning mode.
///
/// Equality compares the persisted state only; the pending-utterance ring is
/// session scratch and is not saved.
class CommandRegistry {
 public:
  static constexpr std::size_t kPendingCapacity = 32;

  explicit CommandRegistry(std::size_t dim, KwsConfig kws = {});

  std::size_t dim() const noexcept { return dim_; }
  LearningMode mode() const noexcept { return mode_; }
  const KwsConfig& kws_config() const noexcept { return kws_; }
  const std::vector<CommandEntry>& commands() const noexcept { return commands_; }
  const KeywordStore& keyword() const noexcept { return keyword_; }
  const std::deque<PendingUtterance>& pending() const noexcept { return pending_; }

  const CommandEntry* find(std::string_view label) const;
  std::size_t total_samples() const;
  bool keyword_ready() const noexcept { return !keyword_.positives.empty() && !keyword_.non_speaking.empty(); }

  /// ActiveLearning and OnDemand need at least two commands
  /// (Errc::InsufficientData).
  void set_mode(LearningMode mode);

  /// Stores the keyword and non-speaking samples and fits the re-exam model.
  /// Only valid in Initialization mode, which then advances to Register.
  KwsReferences initialize_keyword(std::span<const UnitEmbedding> keyword_samples,
                                   std::span<const UnitEmbedding> non_speaking,
                                   const FitConfig& config = {});

  /// Centroids plus a re-exam model fitted on positives vs non-speaking and
  /// reported negatives. Throws UninitializedReferences before initialization.
  KwsReferences keyword_references(const FitConfig& config = {}) const;

  void add_keyword_negative(UnitEmbedding negative);

  /// One-shot registration (or one more sample for an existing label).
  /// Only valid in Register mode.
  void register_command(const std::string& label, UnitEmbedding embedding, std::int64_t t_ms = 0,
                        std::optional<std::string> condition = std::nullopt);

  /// Adds a labeled sample in any mode, creating the command if needed.
  void add_sample(const std::string& label, UnitEmbedding embedding, std::int64_t t_ms = 0,
                  std::optional<std::string> condition = std::nullopt);

  /// Removes a command and its samples. Returns false if absent.
  bool remove_command(const std::string& label);

  /// Remembers a prediction for later feedback; the oldest entry is dropped
  /// past kPendingCapacity.
  void add_pending(std::uint64_t utterance_id, UnitEmbedding embedding, Prediction prediction);

  /// Applies user feedback. ActiveLearning stores the sample under the
  /// confirmed or corrected label; OnDemand stores it only for corrections
  /// that change the label. Returns whether a sample was added.
  bool resolve_prediction(std::uint64_t utterance_id, const Feedback& feedback, std::int64_t t_ms = 0);

  /// Full refit of the command classifier from every stored sample.
  RetrainResult retrain(const FitConfig& config = {}) const;

  nlohmann::json to_json() const;
  static CommandRegistry from_json(const nlohmann::json& doc);

  void save(const std::filesystem::path& path) const;
  static CommandRegistry load(const std::filesystem::path& path);

  friend bool operator==(const CommandRegistry& a, const CommandRegistry& b) {
    return a.dim_ == b.dim_ && a.mode_ == b.mode_ && a.kws_ == b.kws_ && a.commands_ == b.commands_ &&
           a.keyword_ == b.keyword_;
  }

 private:
  CommandEntry& entry_for(const std::string& label);
  void check_dim(const UnitEmbedding& e) const;

  std::size_t dim_;
  LearningMode mode_ = LearningMode::Initialization;
  KwsConfig kws_;
  std::vector<CommandEntry> commands_;
  KeywordStore keyword_;
  std::deque<PendingUtterance> pending_;
};

/// Rewrites a registry document of an older schema as the current version.
/// Version 0 stored embeddings as plain JSON number arrays.
nlohmann::json migrate_registry(const nlohmann::json& doc);

nlohmann::json kws_config_to_json(const KwsConfig& config);
KwsConfig kws_config_from_json(const nlohmann::json& doc, KwsConfig base = {});

}  // namespace lipcmd
