// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lipcmd/classifier.hpp"
#include "lipcmd/embedding.hpp"

namespace lipcmd {

/// Window geometry and gate thresholds of the keyword spotter.
struct KwsConfig {
  int window_frames = 30;
  int hop_frames = 15;
  double frame_rate_hz = 30.0;
  double keyword_threshold = 0.6;
  double eos_threshold = 0.65;
  double eos_delay_factor = 1.5;  // x window length
  double max_utterance_s = 4.0;

  std::int64_t window_ms() const;
  std::int64_t hop_ms() const;
  std::int64_t eos_delay_ms() const;
  std::int64_t max_utterance_ms() const;

  /// Throws Errc::InvalidConfig on out-of-range settings.
  void validate() const;

  friend bool operator==(const KwsConfig&, const KwsConfig&) = default;
};

enum class KwsPhase { Idle, Activated, CommandCapture, Cooldown };

enum class EventKind { KeywordDetected, EndOfSpeech, UtteranceReady, MaxLengthCutoff };

std::string_view to_string(EventKind kind) noexcept;
std::string_view to_string(KwsPhase phase) noexcept;

struct SessionEvent {
  EventKind kind = EventKind::KeywordDetected;
  std::int64_t t_ms = 0;
  std::uint64_t utterance_id = 0;
  std::optional<double> similarity;
  std::optional<UnitEmbedding> utterance;  // set on UtteranceReady
  std::size_t captured_windows = 0;        // set on UtteranceReady
};

/// Reference vectors and the keyword re-examination model.
struct KwsReferences {
  UnitEmbedding keyword;
  UnitEmbedding non_speaking;
  std::shared_ptr<const LinearClassifier> reexam;
};

struct KwsState {
  KwsPhase phase = KwsPhase::Idle;
  std::int64_t activation_ms = 0;
  std::int64_t cooldown_until_ms = 0;
  std::vector<UnitEmbedding> captured;
  std::uint64_t utterance_counter = 0;
};

/// Streaming keyword spotter and utterance segmenter. One instance per
/// session; windows must arrive in time order.
///
///   Idle --(sim to keyword >= 0.6 and re-exam accepts)--> Activated
///   Activated --(window no longer keyword-like)--> CommandCapture
///   CommandCapture --(EOS or max length)--> Cooldown --(one window)--> Idle
///
/// EOS is only tested from activation + eos_delay onward. Windows that look
/// like the keyword right after activation are not captured, nor are silent
/// pause windows before the EOS delay has elapsed.
class KwsEngine {
 public:
  static constexpr std::size_t kRetainedActivations = 32;

  explicit KwsEngine(KwsConfig config = {});

  const KwsConfig& config() const noexcept { return config_; }
  const KwsState& state() const noexcept { return state_; }
  bool ready() const noexcept { return refs_.has_value(); }

  void set_references(KwsReferences refs);
  const std::optional<KwsReferences>& references() const noexcept { return refs_; }

  /// Advances the state machine by one window ending at t_ms. Throws
  /// Errc::UninitializedReferences before set_references().
  std::vector<SessionEvent> process_window(const UnitEmbedding& window, std::int64_t t_ms);

  /// Moves the window that triggered `utterance_id` into `negatives`. Throws
  /// Errc::UnknownUtterance if the activation is not retained (or was already
  /// reported).
  void report_misactivation(std::uint64_t utterance_id, std::vector<UnitEmbedding>& negatives);

  /// Back to Idle with an empty buffer; keeps references and the id counter.
  void reset();

 private:
  void emit_ready(std::vector<SessionEvent>& events, std::int64_t t_ms);

  KwsConfig config_;
  KwsState state_;
  std::optional<KwsReferences> refs_;
  std::deque<std::pair<std::uint64_t, UnitEmbedding>> activations_;
};

/// Re-normalized mean of the captured windows. Throws Errc::EmptyInput.
UnitEmbedding utterance_embedding(std::span<const UnitEmbedding> captured);

}  // namespace lipcmd
