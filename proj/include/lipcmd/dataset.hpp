// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "lipcmd/classifier.hpp"
#include "lipcmd/embedding.hpp"

namespace lipcmd {

/// One recorded (or simulated) utterance with its provenance.
struct DatasetSample {
  std::size_t speaker = 0;
  std::size_t condition = 0;
  std::size_t command = 0;
  std::size_t repetition = 0;
  UnitEmbedding embedding;

  friend bool operator==(const DatasetSample&, const DatasetSample&) = default;
};

/// speakers x conditions x commands x repetitions collection of utterance
/// embeddings. Condition names follow the recording-session tags C1..C7.
class EmbeddingDataset {
 public:
  EmbeddingDataset(std::vector<std::string> command_labels, std::vector<std::string> condition_labels,
                   std::size_t num_speakers);

  void add(DatasetSample sample);

  const std::vector<std::string>& command_labels() const noexcept { return command_labels_; }
  const std::vector<std::string>& condition_labels() const noexcept { return condition_labels_; }
  std::size_t num_speakers() const noexcept { return num_speakers_; }
  std::size_t num_commands() const noexcept { return command_labels_.size(); }
  std::size_t num_conditions() const noexcept { return condition_labels_.size(); }
  std::size_t dim() const noexcept { return samples_.empty() ? 0 : samples_.front().embedding.dim(); }
  const std::vector<DatasetSample>& samples() const noexcept { return samples_; }
  std::size_t size() const noexcept { return samples_.size(); }

  /// Indices into samples() for one (speaker, condition, command) cell,
  /// ordered by repetition.
  const std::vector<std::size_t>& cell(std::size_t speaker, std::size_t condition, std::size_t command) const;

  /// Smallest repetition count over all cells of the speaker.
  std::size_t min_repetitions(std::size_t speaker) const;

  /// Index of a condition label, or npos when absent.
  std::size_t condition_index(const std::string& label) const;

  LabeledSample labeled(std::size_t index) const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;

 private:
  std::vector<std::string> command_labels_;
  std::vector<std::string> condition_labels_;
  std::size_t num_speakers_;
  std::vector<DatasetSample> samples_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<std::size_t>> cells_;
};

}  // namespace lipcmd
