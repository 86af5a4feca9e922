// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <random>
#include <sstream>

#include "lipcmd/error.hpp"
#include "lipcmd/rng.hpp"

namespace lipcmd {

namespace {

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return derive_seed(seed, {stream, index});
}

std::vector<double> gaussian(std::uint64_t rng_seed, std::size_t dim) {
  std::mt19937_64 rng(rng_seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  return v;
}

void scale_to_unit(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

const std::vector<std::string>& builtin_labels() {
  static const std::vector<std::string> labels = {
      "play some music",     "pause the music",     "next song",          "volume up",
      "volume down",         "turn on the lights",  "turn off the lights", "set an alarm",
      "what time is it",     "weather today",       "call mom",           "open the camera",
      "take a photo",        "send a message",      "read my messages",   "start a timer",
      "stop the timer",      "open maps",           "find my car",        "navigate home",
      "check my calendar",   "add a reminder",      "open email",         "mute notifications",
      "turn on wifi",        "turn off wifi",       "brighter screen",    "dimmer screen",
      "open settings",       "lock the screen",
  };
  return labels;
}

constexpr std::uint64_t kDirections = 0xD1;

}  // namespace

SimParams calibrated_params() {
  SimParams p;
  p.noise = 1.5;  // calibrate-sim, 200 seeds: mean one-shot F1 0.914
  return p;
}

SimWorld::SimWorld(SimParams params, std::uint64_t seed) : params_(std::move(params)), seed_(seed) {
  if (params_.dim == 0) throw Error(Errc::InvalidConfig, "world dimension must be positive");
  if (params_.speaker_weight < 0 || params_.condition_weight < 0 || params_.noise < 0 ||
      params_.keyword_noise < 0 || params_.silence_noise < 0 || params_.window_jitter < 0) {
    throw Error(Errc::InvalidConfig, "mixing weights must be non-negative");
  }
  labels_ = params_.command_labels;
  if (labels_.empty()) {
    for (std::size_t c = 0; c < params_.num_commands; ++c) {
      labels_.push_back(c < builtin_labels().size() ? builtin_labels()[c] : "command " + std::to_string(c));
    }
  }
  params_.num_commands = labels_.size();

  std::uint64_t next = 0;
  auto direction = [&] { return random_unit(kDirections, next++); };
  for (std::size_t c = 0; c < params_.num_commands; ++c) commands_.push_back(direction());
  for (std::size_t s = 0; s < params_.num_speakers; ++s) speakers_.push_back(direction());
  for (std::size_t k = 0; k < params_.num_conditions; ++k) conditions_.push_back(direction());
  silence_ = direction();
  for (std::size_t s = 0; s < params_.num_speakers; ++s) keywords_.push_back(direction());
  for (std::size_t s = 0; s < params_.num_speakers; ++s) voice_.push_back(direction());
  for (std::size_t r = 0; r < params_.raw_nuisance_rank; ++r) {
    nuisance_.push_back(random_unit(static_cast<std::uint64_t>(Stream::RawNuisance), r));
  }
}

std::vector<std::string> SimWorld::condition_labels() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < params_.num_conditions; ++k) out.push_back("C" + std::to_string(k + 1));
  return out;
}

std::size_t SimWorld::command_index(std::string_view label) const {
  const auto it = std::find(labels_.begin(), labels_.end(), label);
  if (it == labels_.end()) throw Error(Errc::UnknownLabel, "unknown command label: " + std::string(label));
  return static_cast<std::size_t>(it - labels_.begin());
}

std::vector<double> SimWorld::random_unit(std::uint64_t stream, std::uint64_t index) const {
  auto v = gaussian(mix(seed_, stream, index), params_.dim);
  scale_to_unit(v);
  return v;
}

void SimWorld::check_indices(std::size_t speaker, std::size_t condition) const {
  if (speaker >= params_.num_speakers) throw Error(Errc::IndexOutOfRange, "speaker index out of range");
  if (condition >= params_.num_conditions) throw Error(Errc::IndexOutOfRange, "condition index out of range");
}

UnitEmbedding SimWorld::compose(const std::vector<double>& signal, std::size_t speaker, std::size_t condition,
                                double noise, Stream stream, std::uint64_t draw_index) const {
  std::vector<double> v = signal;
  axpy(params_.speaker_weight, speakers_[speaker], v);
  axpy(params_.condition_weight, conditions_[condition], v);
  if (noise > 0.0) {
    const auto eps = gaussian(mix(seed_, static_cast<std::uint64_t>(stream), draw_index), params_.dim);
    axpy(noise / std::sqrt(static_cast<double>(params_.dim)), eps, v);
  }
  return normalize(std::span<const double>(v));
}

UnitEmbedding SimWorld::sample_utterance(std::size_t speaker, std::size_t command, std::size_t condition,
                                         std::uint64_t draw_index, UtteranceStyle style) const {
  check_indices(speaker, condition);
  if (command >= commands_.size()) throw Error(Errc::IndexOutOfRange, "command index out of range");
  if (style == UtteranceStyle::Voiced && params_.voiced_shift > 0.0) {
    std::vector<double> signal = commands_[command];
    axpy(params_.voiced_shift, voice_[speaker], signal);
    return compose(signal, speaker, condition, params_.noise, Stream::Utterance, draw_index);
  }
  return compose(commands_[command], speaker, condition, params_.noise, Stream::Utterance, draw_index);
}

UnitEmbedding SimWorld::sample_keyword(std::size_t speaker, std::size_t condition, std::uint64_t draw_index) const {
  check_indices(speaker, condition);
  return compose(keywords_[speaker], speaker, condition, params_.keyword_noise, Stream::Keyword, draw_index);
}

UnitEmbedding SimWorld::sample_silence(std::size_t speaker, std::size_t condition, std::uint64_t draw_index) const {
  check_indices(speaker, condition);
  return compose(silence_, speaker, condition, params_.silence_noise, Stream::Silence, draw_index);
}

UnitEmbedding SimWorld::sample_distractor(std::size_t speaker, std::uint64_t distractor_id, std::size_t condition,
                                          std::uint64_t draw_index) const {
  check_indices(speaker, condition);
  std::vector<double> signal = random_unit(static_cast<std::uint64_t>(Stream::DistractorDirection), distractor_id);
  if (params_.distractor_keyword_overlap > 0.0) {
    axpy(params_.distractor_keyword_overlap, keywords_[speaker], signal);
    scale_to_unit(signal);
  }
  return compose(signal, speaker, condition, params_.noise, Stream::Distractor, draw_index);
}

std::vector<double> SimWorld::sample_raw(std::size_t speaker, std::size_t command, std::size_t condition,
                                         std::uint64_t draw_index) const {
  check_indices(speaker, condition);
  if (command >= commands_.size()) throw Error(Errc::IndexOutOfRange, "command index out of range");
  std::vector<double> v = commands_[command];
  axpy(params_.speaker_weight, speakers_[speaker], v);
  axpy(params_.condition_weight, conditions_[condition], v);
  const auto eps = gaussian(mix(seed_, static_cast<std::uint64_t>(Stream::Raw), draw_index),
                            params_.dim + nuisance_.size());
  const double iso = params_.noise / std::sqrt(static_cast<double>(params_.dim));
  for (std::size_t d = 0; d < params_.dim; ++d) v[d] += iso * eps[d];
  if (!nuisance_.empty()) {
    const double scale = params_.raw_nuisance_scale / std::sqrt(static_cast<double>(nuisance_.size()));
    for (std::size_t r = 0; r < nuisance_.size(); ++r) axpy(scale * eps[params_.dim + r], nuisance_[r], v);
  }
  return v;
}

RawFeatureSet raw_feature_set(const SimWorld& world, std::span<const std::size_t> speakers, std::size_t repetitions,
                              std::uint64_t draw_base) {
  const auto& p = world.params();
  RawFeatureSet out;
  const std::size_t rows = speakers.size() * p.num_conditions * p.num_commands * repetitions;
  out.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(p.dim));
  out.labels.reserve(rows);
  std::uint64_t draw = draw_base;
  Eigen::Index row = 0;
  for (std::size_t s : speakers) {
    for (std::size_t k = 0; k < p.num_conditions; ++k) {
      for (std::size_t c = 0; c < p.num_commands; ++c) {
        for (std::size_t r = 0; r < repetitions; ++r) {
          const auto v = world.sample_raw(s, c, k, draw++);
          for (std::size_t d = 0; d < p.dim; ++d) out.features(row, static_cast<Eigen::Index>(d)) = v[d];
          out.labels.push_back(static_cast<int>(c));
          ++row;
        }
      }
    }
  }
  return out;
}

EmbeddingDataset generate_dataset(const SimWorld& world, std::size_t repetitions) {
  const auto& p = world.params();
  EmbeddingDataset data(world.command_labels(), world.condition_labels(), p.num_speakers);
  std::uint64_t draw = 0;
  for (std::size_t s = 0; s < p.num_speakers; ++s) {
    for (std::size_t k = 0; k < p.num_conditions; ++k) {
      for (std::size_t c = 0; c < p.num_commands; ++c) {
        for (std::size_t r = 0; r < repetitions; ++r) {
          data.add({s, k, c, r, world.sample_utterance(s, c, k, draw++)});
        }
      }
    }
  }
  return data;
}

StreamScript StreamScript::parse(std::string_view text) {
  StreamScript script;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string kind;
    if (!(fields >> kind)) continue;
    ScriptSegment seg;
    auto fail = [&](const std::string& why) {
      throw Error(Errc::InvalidConfig, "script line " + std::to_string(line_no) + ": " + why);
    };
    if (!(fields >> seg.duration_s) || !(seg.duration_s > 0.0)) fail("expected a positive duration");
    if (kind == "silence") {
      seg.kind = SegmentKind::Silence;
    } else if (kind == "keyword") {
      seg.kind = SegmentKind::Keyword;
    } else if (kind == "distractor") {
      seg.kind = SegmentKind::Distractor;
    } else if (kind == "command") {
      seg.kind = SegmentKind::Command;
      std::getline(fields >> std::ws, seg.label);
      while (!seg.label.empty() && std::isspace(static_cast<unsigned char>(seg.label.back()))) seg.label.pop_back();
      if (seg.label.empty()) fail("command needs a label");
    } else {
      fail("unknown segment kind '" + kind + "'");
    }
    script.segments.push_back(std::move(seg));
  }
  return script;
}

double StreamScript::total_seconds() const {
  double total = 0.0;
  for (const auto& s : segments) total += s.duration_s;
  return total;
}

GeneratedStream generate_stream(const SimWorld& world, std::size_t speaker, const StreamScript& script,
                                std::size_t condition, std::uint64_t stream_seed, const KwsConfig& geometry) {
  struct Placed {
    std::int64_t start_ms;
    std::int64_t end_ms;
    bool speech;
    UnitEmbedding vec;
    std::size_t truth_index;
  };
  const auto& p = world.params();
  std::vector<Placed> placed;
  GeneratedStream out;
  std::int64_t cursor = 0;
  for (std::size_t i = 0; i < script.segments.size(); ++i) {
    const auto& seg = script.segments[i];
    const auto dur = static_cast<std::int64_t>(std::llround(seg.duration_s * 1000.0));
    const std::uint64_t draw = mix(stream_seed, 0x5E6, i);
    Placed pl{cursor, cursor + dur, seg.kind != SegmentKind::Silence, {}, static_cast<std::size_t>(-1)};
    switch (seg.kind) {
      case SegmentKind::Silence: pl.vec = world.sample_silence(speaker, condition, draw); break;
      case SegmentKind::Keyword: pl.vec = world.sample_keyword(speaker, condition, draw); break;
      case SegmentKind::Command:
        pl.vec = world.sample_utterance(speaker, world.command_index(seg.label), condition, draw);
        break;
      case SegmentKind::Distractor:
        pl.vec = world.sample_distractor(speaker, mix(stream_seed, 0xD15, i), condition, draw);
        break;
    }
    if (pl.speech) {
      pl.truth_index = out.truth.size();
      out.truth.push_back({seg.kind, seg.label, pl.start_ms, pl.end_ms, -1, -1});
    }
    placed.push_back(std::move(pl));
    cursor += dur;
  }

  const std::int64_t window = geometry.window_ms();
  const std::int64_t hop = geometry.hop_ms();
  const double jitter_scale = p.window_jitter / std::sqrt(static_cast<double>(p.dim));
  std::uint64_t seq = 0;
  for (std::int64_t t = window; t <= cursor; t += hop) {
    const std::int64_t lo = t - window;
    std::vector<double> v(p.dim, 0.0);
    double best_weight = -1.0;
    std::size_t best = 0;
    for (std::size_t i = 0; i < placed.size(); ++i) {
      const auto& pl = placed[i];
      const std::int64_t overlap = std::min(t, pl.end_ms) - std::max(lo, pl.start_ms);
      if (overlap <= 0) continue;
      const double w = static_cast<double>(overlap) / 1000.0 * (pl.speech ? p.speech_gain : 1.0);
      const auto vals = pl.vec.values();
      for (std::size_t d = 0; d < p.dim; ++d) v[d] += w * vals[d];
      if (w > best_weight) {
        best_weight = w;
        best = i;
      }
    }
    for (const auto& pl : placed) {
      if (pl.truth_index == static_cast<std::size_t>(-1)) continue;
      auto& truth = out.truth[pl.truth_index];
      if (truth.first_clear_window_ms < 0 && lo >= pl.end_ms) truth.first_clear_window_ms = t;
    }
    if (placed[best].truth_index != static_cast<std::size_t>(-1)) {
      auto& truth = out.truth[placed[best].truth_index];
      if (truth.first_dominant_window_ms < 0) truth.first_dominant_window_ms = t;
    }
    if (jitter_scale > 0.0) {
      const auto eps = gaussian(mix(stream_seed, 0x3117, seq), p.dim);
      axpy(jitter_scale, eps, v);
    }
    out.windows.push_back({seq, t, normalize(std::span<const double>(v))});
    ++seq;
  }
  return out;
}

}  // namespace lipcmd
