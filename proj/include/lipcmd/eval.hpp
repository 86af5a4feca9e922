// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lipcmd/classifier.hpp"
#include "lipcmd/contrastive.hpp"
#include "lipcmd/dataset.hpp"
#include "lipcmd/metrics.hpp"
#include "lipcmd/simulator.hpp"

namespace lipcmd {

/// One grid cell: its coordinates, the per-run metric values and the
/// per-run train/test sizes (used to reconcile with the protocol arithmetic).
struct ReportCell {
  std::vector<std::pair<std::string, std::string>> key;
  std::vector<double> values;
  Summary summary;
  std::size_t train_size = 0;  // samples per classifier fit
  std::size_t test_size = 0;   // samples per evaluation
  bool failed = false;
  std::string failure;

  const std::string& at(const std::string& axis) const;
};

struct ExperimentReport {
  std::string protocol;
  std::string metric;  // "macro_f1" | "accuracy" | "eer"
  std::uint64_t seed = 0;
  std::size_t repeats = 0;
  nlohmann::json grid;
  std::vector<ReportCell> cells;
  double runtime_s = 0.0;

  const ReportCell& find(const std::vector<std::pair<std::string, std::string>>& key) const;

  /// Grid table: key columns, then mean, stddev, n, train_size, test_size.
  std::string to_csv() const;
  /// Full record including every per-run value.
  nlohmann::json to_json() const;
  /// Writes <protocol>.csv and <protocol>.json into `dir`.
  void write(const std::filesystem::path& dir) const;
};

struct ShotsConfig {
  std::vector<std::size_t> command_counts = {5, 10, 15, 20, 25};  // M
  std::vector<std::size_t> shot_counts = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};  // N
  std::size_t repeats = 1000;
  std::size_t test_repetitions = 2;  // last reps of every condition are held out
  std::uint64_t seed = 0;
  FitConfig fit;
};

/// Random M-command subsets, N training shots per command drawn from the
/// non-test repetitions of any condition; macro-F1 on the held-out
/// repetitions. Within one repeat the command subsets and shot draws are
/// nested, so cells of the same repeat are paired.
ExperimentReport run_shots_experiment(const EmbeddingDataset& data, const ShotsConfig& config);

struct LocoConfig {
  std::size_t shots_per_training_condition = 1;
  std::size_t repeats = 100;
  std::size_t test_repetitions = 2;  // for the in-condition reference cell
  std::uint64_t seed = 0;
  FitConfig fit;
};

/// Leave-one-condition-out: train on shots_per_training_condition samples per
/// command from each of the other conditions, test on every sample of the
/// left-out one. Also emits an "in_condition" reference cell with the same
/// shot total drawn from all conditions' training repetitions.
ExperimentReport run_leave_one_condition_out(const EmbeddingDataset& data, const LocoConfig& config);

struct ConditionTriplet {
  std::string name;
  std::vector<std::string> conditions;
};

std::vector<ConditionTriplet> default_triplets();

struct CrossConfig {
  std::vector<ConditionTriplet> triplets = default_triplets();
  std::vector<std::size_t> shot_counts = {1, 2, 3, 4, 5};
  std::size_t repeats = 1000;
  std::uint64_t seed = 0;
  FitConfig fit;
};

/// Within each triplet, train on two conditions (shots per command drawn from
/// their pooled repetitions) and test on all samples of the third.
ExperimentReport run_cross_condition(const EmbeddingDataset& data, const CrossConfig& config);

struct EerConfig {
  std::size_t enrollment_samples = 3;  // reference = centroid of the first reps in the first condition
};

/// Per-command one-vs-rest EER of cosine similarity to the command's
/// enrollment centroid, averaged over speakers. Cells carry eer and threshold.
ExperimentReport run_eer_analysis(const EmbeddingDataset& data, const EerConfig& config = {});

struct IncrementalConfig {
  std::size_t trials = 6;
  bool with_learning = true;
  std::size_t keyword_samples = 3;
  std::size_t non_speaking_samples = 3;
  std::size_t distractors_per_trial = 2;
  bool report_misactivations = true;
  std::uint64_t seed = 0;
  FitConfig fit;
  KwsConfig kws;
};

struct TrialStats {
  std::size_t issued = 0;            // commands spoken in the trial
  std::size_t recognized = 0;        // utterances that reached the classifier
  std::size_t correct = 0;
  std::size_t missed_keywords = 0;   // commands with no activation
  std::size_t false_activations = 0;
  std::size_t windows = 0;
  double accuracy = 0.0;             // correct / recognized
  double mean_shots = 0.0;           // samples per command used by the model
};

struct IncrementalCurve {
  std::vector<TrialStats> trials;
};

/// Live-use analog: keyword initialization, one voiced registration sample
/// per command, then trials in which every command is issued once through a
/// simulated stream (keyword + command in a random condition) and processed
/// by the keyword spotter and classifier. With learning, each prediction is
/// confirmed or corrected (active learning) and the model is refit after the
/// trial; without it, the one-shot model stays frozen.
IncrementalCurve run_incremental_curve(const SimWorld& world, const IncrementalConfig& config);

struct AdapterUtilityConfig {
  std::size_t train_speakers = 3;  // one further speaker is held out
  std::size_t train_repetitions = 2;
  std::size_t test_repetitions = 2;
  std::size_t classes = 10;
  std::size_t episodes = 20;
  std::uint64_t seed = 0;
  AdapterTrainConfig train;
  FitConfig fit;
};

struct AdapterUtility {
  double raw_accuracy = 0.0;
  double adapter_accuracy = 0.0;
  std::vector<double> loss_trace;
};

/// Trains an adapter on raw features of the training speakers, then runs
/// one-shot `classes`-way episodes on the held-out speaker with raw
/// (normalized) features and with adapter embeddings.
AdapterUtility run_adapter_utility(const SimParams& params, const AdapterUtilityConfig& config);

struct MisactivationConfig {
  std::size_t replays = 5;
  std::size_t commands_per_stream = 6;
  std::size_t distractors_per_stream = 6;
  std::size_t keyword_samples = 3;
  std::size_t non_speaking_samples = 3;
  std::uint64_t seed = 0;
  FitConfig fit;
  KwsConfig kws;
};

struct ReplayStats {
  std::size_t activations = 0;
  std::size_t false_activations = 0;
  std::size_t missed_keywords = 0;
  std::size_t keywords = 0;
};

/// One scripted stream with keyword-command pairs and distractor speech,
/// replayed `replays` times. After each replay every false activation is
/// reported as a keyword negative and the re-exam model is refit.
std::vector<ReplayStats> run_misactivation_replays(const SimWorld& world, const MisactivationConfig& config);

}  // namespace lipcmd
