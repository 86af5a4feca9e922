// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/dataset.hpp"

#include <algorithm>
#include <limits>

#include "lipcmd/error.hpp"

namespace lipcmd {

EmbeddingDataset::EmbeddingDataset(std::vector<std::string> command_labels,
                                   std::vector<std::string> condition_labels, std::size_t num_speakers)
    : command_labels_(std::move(command_labels)),
      condition_labels_(std::move(condition_labels)),
      num_speakers_(num_speakers) {}

void EmbeddingDataset::add(DatasetSample sample) {
  if (sample.speaker >= num_speakers_ || sample.condition >= condition_labels_.size() ||
      sample.command >= command_labels_.size()) {
    throw Error(Errc::IndexOutOfRange, "dataset sample index out of range");
  }
  if (!samples_.empty() && sample.embedding.dim() != samples_.front().embedding.dim()) {
    throw Error(Errc::DimMismatch, "dataset samples differ in dimension");
  }
  auto& indices = cells_[{sample.speaker, sample.condition, sample.command}];
  const std::size_t index = samples_.size();
  const std::size_t rep = sample.repetition;
  samples_.push_back(std::move(sample));
  const auto pos = std::upper_bound(indices.begin(), indices.end(), rep, [&](std::size_t r, std::size_t i) {
    return r < samples_[i].repetition;
  });
  indices.insert(pos, index);
}

const std::vector<std::size_t>& EmbeddingDataset::cell(std::size_t speaker, std::size_t condition,
                                                       std::size_t command) const {
  static const std::vector<std::size_t> empty;
  const auto it = cells_.find({speaker, condition, command});
  return it == cells_.end() ? empty : it->second;
}

std::size_t EmbeddingDataset::min_repetitions(std::size_t speaker) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  for (std::size_t k = 0; k < num_conditions(); ++k) {
    for (std::size_t c = 0; c < num_commands(); ++c) best = std::min(best, cell(speaker, k, c).size());
  }
  return num_conditions() == 0 || num_commands() == 0 ? 0 : best;
}

std::size_t EmbeddingDataset::condition_index(const std::string& label) const {
  const auto it = std::find(condition_labels_.begin(), condition_labels_.end(), label);
  return it == condition_labels_.end() ? std::string::npos : static_cast<std::size_t>(it - condition_labels_.begin());
}

LabeledSample EmbeddingDataset::labeled(std::size_t index) const {
  const auto& s = samples_.at(index);
  return {s.embedding, command_labels_[s.command], condition_labels_[s.condition], 0};
}

}  // namespace lipcmd
