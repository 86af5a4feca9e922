// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lipcmd/contrastive.hpp"
#include "lipcmd/dataset.hpp"
#include "lipcmd/embedding.hpp"
#include "lipcmd/kws.hpp"
#include "lipcmd/metrics.hpp"

namespace lipcmd {

/// Generative parameters of the synthetic speaker world.
///
/// An utterance is normalize(g_c + alpha h_s + beta d_k + sigma e / sqrt(dim)),
/// where g_c, h_s and d_k are unit command, speaker and condition directions
/// and e is standard normal. Scaling e by 1/sqrt(dim) makes sigma the expected
/// noise norm, so the same sigma behaves alike at any dimension.
struct SimParams {
  std::size_t dim = 128;
  std::size_t num_commands = 25;
  std::size_t num_speakers = 1;
  std::size_t num_conditions = 7;
  double speaker_weight = 0.5;    // alpha
  double condition_weight = 0.3;  // beta
  double noise = 0.25;            // sigma
  double keyword_noise = 0.25;    // sigma for keyword utterances
  double voiced_shift = 0.0;      // offset of vocalized (registration) utterances
  double silence_noise = 0.15;
  double window_jitter = 0.1;     // per-window noise norm in streams
  double speech_gain = 2.0;       // speech vs silence energy inside a window
  double distractor_keyword_overlap = 0.0;
  std::size_t raw_nuisance_rank = 8;  // raw features only: low-rank structured noise
  double raw_nuisance_scale = 1.0;
  std::vector<std::string> command_labels;  // empty: built-in labels

  friend bool operator==(const SimParams&, const SimParams&) = default;
};

/// Parameters produced by calibrate() for the default world: 25 commands at
/// a one-shot macro-F1 inside [0.85, 0.93]. See tools `calibrate-sim`.
SimParams calibrated_params();

enum class UtteranceStyle { Silent, Voiced };

/// Deterministic synthetic world. Every draw is a pure function of
/// (seed, draw stream, draw index).
class SimWorld {
 public:
  explicit SimWorld(SimParams params, std::uint64_t seed);

  const SimParams& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t dim() const noexcept { return params_.dim; }
  const std::vector<std::string>& command_labels() const noexcept { return labels_; }
  std::vector<std::string> condition_labels() const;
  std::size_t command_index(std::string_view label) const;  // throws UnknownLabel

  UnitEmbedding sample_utterance(std::size_t speaker, std::size_t command, std::size_t condition,
                                 std::uint64_t draw_index,
                                 UtteranceStyle style = UtteranceStyle::Silent) const;
  UnitEmbedding sample_keyword(std::size_t speaker, std::size_t condition, std::uint64_t draw_index) const;
  UnitEmbedding sample_silence(std::size_t speaker, std::size_t condition, std::uint64_t draw_index) const;
  UnitEmbedding sample_distractor(std::size_t speaker, std::uint64_t distractor_id, std::size_t condition,
                                  std::uint64_t draw_index) const;

  /// Pre-adapter feature vector: the unnormalized utterance mixture plus
  /// per-draw noise of norm ~raw_nuisance_scale inside a fixed low-rank
  /// subspace shared by all speakers.
  std::vector<double> sample_raw(std::size_t speaker, std::size_t command, std::size_t condition,
                                 std::uint64_t draw_index) const;

  const std::vector<double>& command_direction(std::size_t command) const { return commands_.at(command); }

 private:
  enum class Stream : std::uint64_t { Utterance = 1, Keyword, Silence, Distractor, DistractorDirection, Raw, RawNuisance };

  void check_indices(std::size_t speaker, std::size_t condition) const;
  std::vector<double> random_unit(std::uint64_t stream, std::uint64_t index) const;
  UnitEmbedding compose(const std::vector<double>& signal, std::size_t speaker, std::size_t condition,
                        double noise, Stream stream, std::uint64_t draw_index) const;

  SimParams params_;
  std::uint64_t seed_;
  std::vector<std::string> labels_;
  std::vector<std::vector<double>> commands_;
  std::vector<std::vector<double>> speakers_;
  std::vector<std::vector<double>> conditions_;
  std::vector<std::vector<double>> keywords_;
  std::vector<std::vector<double>> voice_;
  std::vector<double> silence_;
  std::vector<std::vector<double>> nuisance_;
};

/// Raw features of `speakers` x conditions x commands x `repetitions`,
/// labeled by command index. Draw indices start at `draw_base`.
RawFeatureSet raw_feature_set(const SimWorld& world, std::span<const std::size_t> speakers,
                              std::size_t repetitions, std::uint64_t draw_base = 0);

/// Full cross product speakers x conditions x commands x repetitions.
/// Draw indices are assigned in that nesting order.
EmbeddingDataset generate_dataset(const SimWorld& world, std::size_t repetitions);

enum class SegmentKind { Silence, Keyword, Command, Distractor };

struct ScriptSegment {
  SegmentKind kind = SegmentKind::Silence;
  double duration_s = 0.0;
  std::string label;  // Command only
};

/// Ordered segments of a scripted recording. Text form, one segment per line:
///
///   silence 2
///   keyword 1
///   command 1.5 play some music
///   distractor 1
///
/// '#' starts a comment. Durations are seconds.
struct StreamScript {
  std::vector<ScriptSegment> segments;

  static StreamScript parse(std::string_view text);  // throws Errc::InvalidConfig
  double total_seconds() const;
};

struct StreamWindow {
  std::uint64_t seq = 0;
  std::int64_t t_ms = 0;  // window end time
  UnitEmbedding embedding;
};

/// Ground truth for one speech segment of a generated stream.
struct SegmentTruth {
  SegmentKind kind = SegmentKind::Silence;
  std::string label;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;
  /// First window in which this segment dominates (keyword: expected
  /// detection time) and first window entirely after it (command: expected
  /// end-of-speech time).
  std::int64_t first_dominant_window_ms = -1;
  std::int64_t first_clear_window_ms = -1;
};

struct GeneratedStream {
  std::vector<StreamWindow> windows;
  std::vector<SegmentTruth> truth;  // speech segments only, in script order
};

/// Window-level stream for one speaker in one recording condition. Each
/// segment contributes one utterance draw; a window is the overlap-weighted
/// blend of the segments it covers (speech scaled by speech_gain) plus
/// per-window jitter, so boundary windows mix neighbouring segments.
GeneratedStream generate_stream(const SimWorld& world, std::size_t speaker, const StreamScript& script,
                                std::size_t condition, std::uint64_t stream_seed,
                                const KwsConfig& geometry = {});

/// Mean one-shot macro-F1 for M = all commands over `seeds` independent worlds
/// built from `params` (seeds 0..seeds-1). Used by calibrate().
Summary one_shot_f1(const SimParams& params, std::size_t seeds, std::size_t repetitions = 5);

struct CalibrationTarget {
  double low = 0.85;
  double high = 0.93;
  std::size_t seeds = 200;
  std::vector<double> sigma_grid;  // ascending; empty = default grid
};

struct CalibrationResult {
  SimParams params;
  double achieved = 0.0;
  double achieved_std = 0.0;
  bool in_band = false;
  std::vector<std::pair<double, double>> trace;  // (sigma, mean F1)
};

/// Grid search over sigma (speaker and condition weights fixed) for the first
/// value whose mean one-shot 25-command macro-F1 falls inside the band.
/// Throws Errc::TargetUnreachable naming the nearest value otherwise.
CalibrationResult calibrate(const SimParams& base, const CalibrationTarget& target = {});

/// Grid search variant that reports instead of throwing.
CalibrationResult calibrate_nothrow(const SimParams& base, const CalibrationTarget& target);

}  // namespace lipcmd
