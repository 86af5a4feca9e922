// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/kws.hpp"

#include <algorithm>
#include <cmath>

#include "lipcmd/error.hpp"

namespace lipcmd {

namespace {

std::int64_t seconds_to_ms(double s) { return static_cast<std::int64_t>(std::llround(s * 1000.0)); }

}  // namespace

std::int64_t KwsConfig::window_ms() const { return seconds_to_ms(window_frames / frame_rate_hz); }
std::int64_t KwsConfig::hop_ms() const { return seconds_to_ms(hop_frames / frame_rate_hz); }
std::int64_t KwsConfig::eos_delay_ms() const {
  return seconds_to_ms(eos_delay_factor * window_frames / frame_rate_hz);
}
std::int64_t KwsConfig::max_utterance_ms() const { return seconds_to_ms(max_utterance_s); }

void KwsConfig::validate() const {
  auto fail = [](const char* what) { throw Error(Errc::InvalidConfig, what); };
  if (window_frames <= 0 || hop_frames <= 0) fail("window and hop must be positive");
  if (hop_frames > window_frames) fail("hop_frames must not exceed window_frames");
  if (!(frame_rate_hz > 0.0)) fail("frame_rate_hz must be positive");
  if (!(keyword_threshold > 0.0 && keyword_threshold < 1.0)) fail("keyword_threshold must be in (0, 1)");
  if (!(eos_threshold > 0.0 && eos_threshold < 1.0)) fail("eos_threshold must be in (0, 1)");
  if (!(eos_delay_factor >= 0.0)) fail("eos_delay_factor must be non-negative");
  if (!(max_utterance_s > 0.0)) fail("max_utterance_s must be positive");
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::KeywordDetected: return "keyword_detected";
    case EventKind::EndOfSpeech: return "end_of_speech";
    case EventKind::UtteranceReady: return "utterance_ready";
    case EventKind::MaxLengthCutoff: return "max_length_cutoff";
  }
  return "unknown";
}

std::string_view to_string(KwsPhase phase) noexcept {
  switch (phase) {
    case KwsPhase::Idle: return "idle";
    case KwsPhase::Activated: return "activated";
    case KwsPhase::CommandCapture: return "command_capture";
    case KwsPhase::Cooldown: return "cooldown";
  }
  return "unknown";
}

KwsEngine::KwsEngine(KwsConfig config) : config_(config) { config_.validate(); }

void KwsEngine::set_references(KwsReferences refs) {
  if (refs.keyword.empty() || refs.non_speaking.empty() || !refs.reexam) {
    throw Error(Errc::UninitializedReferences, "keyword, non-speaking and re-exam model are all required");
  }
  if (refs.keyword.dim() != refs.non_speaking.dim() || refs.reexam->dim() != refs.keyword.dim()) {
    throw Error(Errc::DimMismatch, "reference vectors and re-exam model differ in dimension");
  }
  refs_ = std::move(refs);
}

void KwsEngine::reset() {
  state_.phase = KwsPhase::Idle;
  state_.captured.clear();
}

void KwsEngine::emit_ready(std::vector<SessionEvent>& events, std::int64_t t_ms) {
  SessionEvent ready{EventKind::UtteranceReady, t_ms, state_.utterance_counter, std::nullopt, std::nullopt, 0};
  ready.captured_windows = state_.captured.size();
  ready.utterance = utterance_embedding(state_.captured);
  events.push_back(std::move(ready));
  state_.captured.clear();
  state_.phase = KwsPhase::Cooldown;
  state_.cooldown_until_ms = t_ms + config_.window_ms();
}

std::vector<SessionEvent> KwsEngine::process_window(const UnitEmbedding& window, std::int64_t t_ms) {
  if (!refs_) throw Error(Errc::UninitializedReferences, "keyword references are not initialized");
  std::vector<SessionEvent> events;
  const std::uint64_t id = state_.utterance_counter;

  if (state_.phase == KwsPhase::Cooldown) {
    if (t_ms < state_.cooldown_until_ms) return events;
    state_.phase = KwsPhase::Idle;
  }

  const double keyword_sim = cosine_similarity(window, refs_->keyword);

  if (state_.phase == KwsPhase::Idle) {
    if (keyword_sim >= config_.keyword_threshold &&
        refs_->reexam->probability_of(window, kKeywordClass) >= 0.5) {
      state_.phase = KwsPhase::Activated;
      state_.activation_ms = t_ms;
      state_.captured.clear();
      state_.utterance_counter = id + 1;
      activations_.emplace_back(state_.utterance_counter, window);
      if (activations_.size() > kRetainedActivations) activations_.pop_front();
      events.push_back({EventKind::KeywordDetected, t_ms, state_.utterance_counter, keyword_sim, std::nullopt, 0});
    }
    return events;
  }

  const std::int64_t since = t_ms - state_.activation_ms;
  const bool eos_armed = since >= config_.eos_delay_ms();

  if (state_.phase == KwsPhase::Activated) {
    if (keyword_sim >= config_.keyword_threshold && !eos_armed) return events;  // keyword tail
    state_.phase = KwsPhase::CommandCapture;
  }

  const double silence_sim = cosine_similarity(window, refs_->non_speaking);
  if (silence_sim >= config_.eos_threshold) {
    if (eos_armed) {
      events.push_back({EventKind::EndOfSpeech, t_ms, id, silence_sim, std::nullopt, 0});
      if (state_.captured.empty()) {
        // keyword followed by nothing: drop the activation
        state_.phase = KwsPhase::Cooldown;
        state_.cooldown_until_ms = t_ms + config_.window_ms();
      } else {
        emit_ready(events, t_ms);
      }
      return events;
    }
    // pause between keyword and command; not part of the utterance
  } else {
    state_.captured.push_back(window);
  }

  if (since >= config_.max_utterance_ms()) {
    events.push_back({EventKind::MaxLengthCutoff, t_ms, id, std::nullopt, std::nullopt, 0});
    if (state_.captured.empty()) {
      state_.phase = KwsPhase::Cooldown;
      state_.cooldown_until_ms = t_ms + config_.window_ms();
    } else {
      emit_ready(events, t_ms);
    }
  }
  return events;
}

void KwsEngine::report_misactivation(std::uint64_t utterance_id, std::vector<UnitEmbedding>& negatives) {
  const auto it = std::find_if(activations_.begin(), activations_.end(),
                               [&](const auto& entry) { return entry.first == utterance_id; });
  if (it == activations_.end()) {
    throw Error(Errc::UnknownUtterance, "no retained activation with id " + std::to_string(utterance_id));
  }
  negatives.push_back(it->second);
  activations_.erase(it);
}

UnitEmbedding utterance_embedding(std::span<const UnitEmbedding> captured) {
  if (captured.empty()) throw Error(Errc::EmptyInput, "no captured windows");
  return centroid(captured);
}

}  // namespace lipcmd
