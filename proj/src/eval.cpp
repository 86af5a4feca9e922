// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/eval.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "lipcmd/eer.hpp"
#include "lipcmd/error.hpp"
#include "lipcmd/kws.hpp"
#include "lipcmd/registry.hpp"
#include "lipcmd/rng.hpp"

namespace lipcmd {

using nlohmann::json;
using Key = std::vector<std::pair<std::string, std::string>>;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct FitOutcome {
  double f1 = 0.0;
  double acc = 0.0;
};

// Fits on `train` and scores `test` (indices into data.samples()).
FitOutcome fit_and_score(const EmbeddingDataset& data, const std::vector<std::size_t>& train,
                         const std::vector<std::size_t>& test, const FitConfig& fit_config) {
  std::vector<LabeledSample> samples;
  samples.reserve(train.size());
  for (std::size_t i : train) samples.push_back(data.labeled(i));
  const LinearClassifier clf = fit(samples, fit_config);

  std::map<std::string, int> label_index;
  for (std::size_t k = 0; k < clf.labels().size(); ++k) label_index[clf.labels()[k]] = static_cast<int>(k);

  std::vector<UnitEmbedding> rows;
  std::vector<int> truth;
  rows.reserve(test.size());
  for (std::size_t i : test) {
    const auto& s = data.samples()[i];
    rows.push_back(s.embedding);
    truth.push_back(label_index.at(data.command_labels()[s.command]));
  }
  const auto predicted = clf.predict_indices(stack_rows(rows));
  return {macro_f1(truth, predicted, clf.num_classes()), accuracy(truth, predicted)};
}

std::mt19937_64 rng_for(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return std::mt19937_64(derive_seed(seed, path));
}

void finalize(ReportCell& cell) { cell.summary = summarize(cell.values); }

void require_all_conditions(const EmbeddingDataset& data) {
  for (int k = 1; k <= 7; ++k) {
    const std::string tag = "C" + std::to_string(k);
    const std::size_t idx = data.condition_index(tag);
    if (idx == std::string::npos) throw Error(Errc::MissingCondition, "dataset has no condition " + tag);
    for (std::size_t s = 0; s < data.num_speakers(); ++s) {
      for (std::size_t c = 0; c < data.num_commands(); ++c) {
        if (data.cell(s, idx, c).empty()) {
          throw Error(Errc::MissingCondition, "condition " + tag + " has no samples for command '" +
                                                  data.command_labels()[c] + "'");
        }
      }
    }
  }
}

}  // namespace

const std::string& ReportCell::at(const std::string& axis) const {
  for (const auto& [k, v] : key) {
    if (k == axis) return v;
  }
  throw Error(Errc::IndexOutOfRange, "cell has no axis " + axis);
}

const ReportCell& ExperimentReport::find(const Key& key) const {
  for (const auto& cell : cells) {
    if (cell.key == key) return cell;
  }
  throw Error(Errc::IndexOutOfRange, "report " + protocol + " has no such cell");
}

std::string ExperimentReport::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  if (!cells.empty()) {
    for (const auto& [axis, value] : cells.front().key) out << axis << ',';
  }
  out << "mean,stddev,n,train_size,test_size,status\n";
  for (const auto& cell : cells) {
    for (const auto& [axis, value] : cell.key) out << value << ',';
    out << cell.summary.mean << ',' << cell.summary.stddev << ',' << cell.summary.n << ',' << cell.train_size << ','
        << cell.test_size << ',' << (cell.failed ? "failed" : "ok") << '\n';
  }
  return out.str();
}

json ExperimentReport::to_json() const {
  json out = {{"protocol", protocol}, {"metric", metric},   {"seed", seed},
              {"repeats", repeats},   {"grid", grid},       {"runtime_s", runtime_s},
              {"cells", json::array()}};
  for (const auto& cell : cells) {
    json key = json::object();
    for (const auto& [axis, value] : cell.key) key[axis] = value;
    json item = {{"key", key},
                 {"mean", cell.summary.mean},
                 {"stddev", cell.summary.stddev},
                 {"n", cell.summary.n},
                 {"train_size", cell.train_size},
                 {"test_size", cell.test_size},
                 {"values", cell.values}};
    if (cell.failed) item["failure"] = cell.failure;
    out["cells"].push_back(std::move(item));
  }
  return out;
}

void ExperimentReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
    out << text;
  };
  put(dir / (protocol + ".csv"), to_csv());
  // runtime is wall-clock and would break byte-identical reruns; keep it out of the file
  json doc = to_json();
  doc.erase("runtime_s");
  put(dir / (protocol + ".json"), doc.dump(1) + "\n");
}

ExperimentReport run_shots_experiment(const EmbeddingDataset& data, const ShotsConfig& config) {
  const auto start = Clock::now();
  if (config.repeats == 0) throw Error(Errc::InsufficientData, "repeats must be positive");
  if (config.command_counts.empty() || config.shot_counts.empty()) {
    throw Error(Errc::InsufficientData, "empty command or shot grid");
  }
  const std::size_t max_m = *std::max_element(config.command_counts.begin(), config.command_counts.end());
  const std::size_t max_n = *std::max_element(config.shot_counts.begin(), config.shot_counts.end());
  if (std::find(config.command_counts.begin(), config.command_counts.end(), 1) != config.command_counts.end() ||
      std::find(config.shot_counts.begin(), config.shot_counts.end(), 0) != config.shot_counts.end()) {
    throw Error(Errc::InsufficientData, "need M >= 2 commands and N >= 1 shots");
  }
  if (max_m > data.num_commands()) {
    throw Error(Errc::InsufficientData, "dataset has " + std::to_string(data.num_commands()) + " commands, grid needs " +
                                            std::to_string(max_m));
  }
  for (std::size_t s = 0; s < data.num_speakers(); ++s) {
    const std::size_t reps = data.min_repetitions(s);
    if (reps <= config.test_repetitions ||
        (reps - config.test_repetitions) * data.num_conditions() < max_n) {
      throw Error(Errc::InsufficientData, "not enough repetitions for " + std::to_string(max_n) + " training shots");
    }
  }

  ExperimentReport report;
  report.protocol = "shots";
  report.metric = "macro_f1";
  report.seed = config.seed;
  report.repeats = config.repeats;
  report.grid = {{"M", config.command_counts}, {"N", config.shot_counts}, {"test_repetitions", config.test_repetitions}};
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> cell_of;
  for (std::size_t m : config.command_counts) {
    for (std::size_t n : config.shot_counts) {
      cell_of[{m, n}] = report.cells.size();
      report.cells.push_back({{{"M", std::to_string(m)}, {"N", std::to_string(n)}}, {}, {}, m * n, 0, false, {}});
    }
  }

  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (std::size_t s = 0; s < data.num_speakers(); ++s) {
      auto rng = rng_for(config.seed, {0x5407, r, s});
      std::vector<std::size_t> commands(data.num_commands());
      std::iota(commands.begin(), commands.end(), std::size_t{0});
      std::shuffle(commands.begin(), commands.end(), rng);

      // per-command shuffled training pool and fixed test set
      const std::size_t reps = data.min_repetitions(s);
      const std::size_t train_reps = reps - config.test_repetitions;
      std::vector<std::vector<std::size_t>> pool(data.num_commands());
      std::vector<std::vector<std::size_t>> tests(data.num_commands());
      for (std::size_t c = 0; c < data.num_commands(); ++c) {
        for (std::size_t k = 0; k < data.num_conditions(); ++k) {
          const auto& cell = data.cell(s, k, c);
          for (std::size_t i = 0; i < cell.size(); ++i) {
            const std::size_t rep = data.samples()[cell[i]].repetition;
            if (i < train_reps && rep < train_reps) {
              pool[c].push_back(cell[i]);
            } else if (i >= cell.size() - config.test_repetitions) {
              tests[c].push_back(cell[i]);
            }
          }
        }
        std::shuffle(pool[c].begin(), pool[c].end(), rng);
      }

      for (std::size_t m : config.command_counts) {
        std::vector<std::size_t> test;
        for (std::size_t i = 0; i < m; ++i) test.insert(test.end(), tests[commands[i]].begin(), tests[commands[i]].end());
        for (std::size_t n : config.shot_counts) {
          std::vector<std::size_t> train;
          for (std::size_t i = 0; i < m; ++i) train.insert(train.end(), pool[commands[i]].begin(), pool[commands[i]].begin() + static_cast<std::ptrdiff_t>(n));
          auto& cell = report.cells[cell_of[{m, n}]];
          cell.values.push_back(fit_and_score(data, train, test, config.fit).f1);
          cell.test_size = test.size();
        }
      }
    }
  }
  for (auto& cell : report.cells) finalize(cell);
  report.runtime_s = seconds_since(start);
  return report;
}

ExperimentReport run_leave_one_condition_out(const EmbeddingDataset& data, const LocoConfig& config) {
  const auto start = Clock::now();
  if (config.repeats == 0 || config.shots_per_training_condition == 0) {
    throw Error(Errc::InsufficientData, "repeats and shots must be positive");
  }
  require_all_conditions(data);
  const std::size_t num_conditions = data.num_conditions();
  const std::size_t shots_total = config.shots_per_training_condition * (num_conditions - 1);

  ExperimentReport report;
  report.protocol = "loco";
  report.metric = "macro_f1";
  report.seed = config.seed;
  report.repeats = config.repeats;
  report.grid = {{"left_out", data.condition_labels()},
                 {"shots_per_training_condition", config.shots_per_training_condition}};

  for (std::size_t left = 0; left < num_conditions; ++left) {
    ReportCell cell{{{"left_out", data.condition_labels()[left]}}, {}, {}, 0, 0, false, {}};
    for (std::size_t r = 0; r < config.repeats; ++r) {
      for (std::size_t s = 0; s < data.num_speakers(); ++s) {
        auto rng = rng_for(config.seed, {0x10C0, left, r, s});
        std::vector<std::size_t> train;
        std::vector<std::size_t> test;
        for (std::size_t c = 0; c < data.num_commands(); ++c) {
          for (std::size_t k = 0; k < num_conditions; ++k) {
            const auto& cell_idx = data.cell(s, k, c);
            if (k == left) {
              test.insert(test.end(), cell_idx.begin(), cell_idx.end());
              continue;
            }
            if (cell_idx.size() < config.shots_per_training_condition) {
              throw Error(Errc::InsufficientData, "not enough repetitions per condition");
            }
            std::vector<std::size_t> pick = cell_idx;
            std::shuffle(pick.begin(), pick.end(), rng);
            train.insert(train.end(), pick.begin(),
                         pick.begin() + static_cast<std::ptrdiff_t>(config.shots_per_training_condition));
          }
        }
        cell.values.push_back(fit_and_score(data, train, test, config.fit).f1);
        cell.train_size = train.size();
        cell.test_size = test.size();
      }
    }
    finalize(cell);
    report.cells.push_back(std::move(cell));
  }

  // Reference: same shot total, drawn from every condition, tested in-condition.
  ReportCell ref{{{"left_out", "in_condition"}}, {}, {}, 0, 0, false, {}};
  for (std::size_t r = 0; r < config.repeats; ++r) {
    for (std::size_t s = 0; s < data.num_speakers(); ++s) {
      auto rng = rng_for(config.seed, {0x1C0D, r, s});
      std::vector<std::size_t> train;
      std::vector<std::size_t> test;
      for (std::size_t c = 0; c < data.num_commands(); ++c) {
        std::vector<std::size_t> pool;
        for (std::size_t k = 0; k < num_conditions; ++k) {
          const auto& cell_idx = data.cell(s, k, c);
          if (cell_idx.size() <= config.test_repetitions) {
            throw Error(Errc::InsufficientData, "not enough repetitions for the in-condition reference");
          }
          const std::size_t split = cell_idx.size() - config.test_repetitions;
          pool.insert(pool.end(), cell_idx.begin(), cell_idx.begin() + static_cast<std::ptrdiff_t>(split));
          test.insert(test.end(), cell_idx.begin() + static_cast<std::ptrdiff_t>(split), cell_idx.end());
        }
        if (pool.size() < shots_total) throw Error(Errc::InsufficientData, "training pool too small");
        std::shuffle(pool.begin(), pool.end(), rng);
        train.insert(train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shots_total));
      }
      ref.values.push_back(fit_and_score(data, train, test, config.fit).f1);
      ref.train_size = train.size();
      ref.test_size = test.size();
    }
  }
  finalize(ref);
  report.cells.push_back(std::move(ref));
  report.runtime_s = seconds_since(start);
  return report;
}

std::vector<ConditionTriplet> default_triplets() {
  return {{"lighting", {"C1", "C2", "C3"}}, {"posture", {"C3", "C4", "C5"}}, {"gesture", {"C5", "C6", "C7"}}};
}

ExperimentReport run_cross_condition(const EmbeddingDataset& data, const CrossConfig& config) {
  const auto start = Clock::now();
  if (config.repeats == 0 || config.shot_counts.empty()) throw Error(Errc::InsufficientData, "empty grid");
  if (std::find(config.shot_counts.begin(), config.shot_counts.end(), 0) != config.shot_counts.end()) {
    throw Error(Errc::InsufficientData, "shots must be at least 1");
  }
  const std::size_t max_n = *std::max_element(config.shot_counts.begin(), config.shot_counts.end());

  ExperimentReport report;
  report.protocol = "cross";
  report.metric = "macro_f1";
  report.seed = config.seed;
  report.repeats = config.repeats;
  report.grid = {{"shots", config.shot_counts}};
  for (const auto& t : config.triplets) report.grid["triplets"][t.name] = t.conditions;

  for (std::size_t g = 0; g < config.triplets.size(); ++g) {
    const auto& triplet = config.triplets[g];
    std::vector<std::size_t> conds;
    for (const auto& tag : triplet.conditions) {
      const std::size_t idx = data.condition_index(tag);
      if (idx == std::string::npos) throw Error(Errc::MissingCondition, "dataset has no condition " + tag);
      for (std::size_t s = 0; s < data.num_speakers(); ++s) {
        for (std::size_t c = 0; c < data.num_commands(); ++c) {
          if (data.cell(s, idx, c).empty()) throw Error(Errc::MissingCondition, "condition " + tag + " is incomplete");
        }
      }
      conds.push_back(idx);
    }

    std::vector<ReportCell> group_cells;
    std::vector<std::vector<double>> average(config.shot_counts.size());
    for (std::size_t left_pos = 0; left_pos < conds.size(); ++left_pos) {
      const std::size_t left = conds[left_pos];
      std::vector<ReportCell> cells;
      for (std::size_t n : config.shot_counts) {
        cells.push_back({{{"group", triplet.name}, {"left_out", data.condition_labels()[left]}, {"shots", std::to_string(n)}},
                         {}, {}, n * data.num_commands(), 0, false, {}});
      }
      for (std::size_t r = 0; r < config.repeats; ++r) {
        for (std::size_t s = 0; s < data.num_speakers(); ++s) {
          auto rng = rng_for(config.seed, {0xC055, g, left_pos, r, s});
          std::vector<std::vector<std::size_t>> pool(data.num_commands());
          std::vector<std::size_t> test;
          for (std::size_t c = 0; c < data.num_commands(); ++c) {
            for (std::size_t k : conds) {
              const auto& cell_idx = data.cell(s, k, c);
              auto& dest = k == left ? test : pool[c];
              dest.insert(dest.end(), cell_idx.begin(), cell_idx.end());
            }
            if (pool[c].size() < max_n) throw Error(Errc::InsufficientData, "training pool smaller than shot count");
            std::shuffle(pool[c].begin(), pool[c].end(), rng);
          }
          for (std::size_t ni = 0; ni < config.shot_counts.size(); ++ni) {
            std::vector<std::size_t> train;
            for (const auto& p : pool) {
              train.insert(train.end(), p.begin(), p.begin() + static_cast<std::ptrdiff_t>(config.shot_counts[ni]));
            }
            cells[ni].values.push_back(fit_and_score(data, train, test, config.fit).f1);
            cells[ni].test_size = test.size();
          }
        }
      }
      for (std::size_t ni = 0; ni < cells.size(); ++ni) {
        if (average[ni].empty()) average[ni].assign(cells[ni].values.size(), 0.0);
        for (std::size_t i = 0; i < cells[ni].values.size(); ++i) {
          average[ni][i] += cells[ni].values[i] / static_cast<double>(conds.size());
        }
        finalize(cells[ni]);
        group_cells.push_back(std::move(cells[ni]));
      }
    }
    for (std::size_t ni = 0; ni < config.shot_counts.size(); ++ni) {
      ReportCell avg{{{"group", triplet.name}, {"left_out", "average"}, {"shots", std::to_string(config.shot_counts[ni])}},
                     std::move(average[ni]), {}, config.shot_counts[ni] * data.num_commands(), 0, false, {}};
      finalize(avg);
      report.cells.push_back(std::move(avg));
    }
    for (auto& cell : group_cells) report.cells.push_back(std::move(cell));
  }
  report.runtime_s = seconds_since(start);
  return report;
}

ExperimentReport run_eer_analysis(const EmbeddingDataset& data, const EerConfig& config) {
  const auto start = Clock::now();
  if (data.num_commands() < 2) throw Error(Errc::InsufficientData, "EER analysis needs at least two commands");
  if (config.enrollment_samples == 0) throw Error(Errc::InsufficientData, "enrollment needs at least one sample");

  ExperimentReport report;
  report.protocol = "eer";
  report.metric = "eer";
  report.repeats = 1;
  report.grid = {{"commands", data.command_labels()}, {"enrollment_samples", config.enrollment_samples}};

  for (std::size_t c = 0; c < data.num_commands(); ++c) {
    ReportCell eer_cell{{{"command", data.command_labels()[c]}, {"stat", "eer"}}, {}, {}, 0, 0, false, {}};
    ReportCell thr_cell{{{"command", data.command_labels()[c]}, {"stat", "threshold"}}, {}, {}, 0, 0, false, {}};
    for (std::size_t s = 0; s < data.num_speakers(); ++s) {
      const auto& first = data.cell(s, 0, c);
      if (first.size() < config.enrollment_samples) {
        throw Error(Errc::InsufficientData, "not enough enrollment samples in the first condition");
      }
      const std::size_t enrolled = config.enrollment_samples;
      std::vector<UnitEmbedding> enroll;
      for (std::size_t i = 0; i < enrolled; ++i) enroll.push_back(data.samples()[first[i]].embedding);
      const UnitEmbedding ref = centroid(enroll);

      std::vector<double> pos;
      std::vector<double> neg;
      for (std::size_t i = 0; i < data.samples().size(); ++i) {
        const auto& sample = data.samples()[i];
        if (sample.speaker != s) continue;
        if (sample.command == c && sample.condition == 0 && std::find(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(enrolled), i) != first.begin() + static_cast<std::ptrdiff_t>(enrolled)) {
          continue;
        }
        (sample.command == c ? pos : neg).push_back(cosine_similarity(ref, sample.embedding));
      }
      if (pos.empty()) throw Error(Errc::InsufficientData, "no positive samples left after enrollment");
      const auto result = compute_eer(pos, neg);
      eer_cell.values.push_back(result.eer);
      thr_cell.values.push_back(result.threshold);
      eer_cell.train_size = thr_cell.train_size = enrolled;
      eer_cell.test_size = thr_cell.test_size = pos.size() + neg.size();
    }
    finalize(eer_cell);
    finalize(thr_cell);
    report.cells.push_back(std::move(eer_cell));
    report.cells.push_back(std::move(thr_cell));
  }
  report.runtime_s = seconds_since(start);
  return report;
}

IncrementalCurve run_incremental_curve(const SimWorld& world, const IncrementalConfig& config) {
  const std::size_t speaker = 0;
  const std::size_t home_condition = 0;
  const auto& labels = world.command_labels();
  if (labels.size() < 2) throw Error(Errc::InsufficientData, "need at least two commands");

  CommandRegistry registry(world.dim(), config.kws);
  std::vector<UnitEmbedding> keyword_samples;
  std::vector<UnitEmbedding> silence_samples;
  for (std::size_t i = 0; i < config.keyword_samples; ++i) {
    keyword_samples.push_back(world.sample_keyword(speaker, home_condition, derive_seed(config.seed, {0x4B57, i})));
  }
  for (std::size_t i = 0; i < config.non_speaking_samples; ++i) {
    silence_samples.push_back(world.sample_silence(speaker, home_condition, derive_seed(config.seed, {0x5113, i})));
  }
  KwsEngine engine(config.kws);
  engine.set_references(registry.initialize_keyword(keyword_samples, silence_samples, config.fit));

  for (std::size_t c = 0; c < labels.size(); ++c) {
    registry.register_command(
        labels[c], world.sample_utterance(speaker, c, home_condition, derive_seed(config.seed, {0x2E6, c}),
                                          UtteranceStyle::Voiced));
  }
  auto model = registry.retrain(config.fit).classifier;
  if (config.with_learning) registry.set_mode(LearningMode::ActiveLearning);

  IncrementalCurve curve;
  const std::int64_t window_ms = config.kws.window_ms();
  for (std::size_t trial = 0; trial < config.trials; ++trial) {
    auto rng = rng_for(config.seed, {0x7819, trial});
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t condition = std::uniform_int_distribution<std::size_t>(0, world.params().num_conditions - 1)(rng);

    StreamScript script;
    script.segments.push_back({SegmentKind::Silence, 1.5, {}});
    std::vector<std::size_t> distractor_slots;
    for (std::size_t d = 0; d < config.distractors_per_trial; ++d) {
      distractor_slots.push_back(std::uniform_int_distribution<std::size_t>(0, order.size() - 1)(rng));
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
      for (std::size_t slot : distractor_slots) {
        if (slot == i) {
          script.segments.push_back({SegmentKind::Distractor, 1.5, {}});
          script.segments.push_back({SegmentKind::Silence, 2.0, {}});
        }
      }
      script.segments.push_back({SegmentKind::Keyword, 1.0, {}});
      script.segments.push_back({SegmentKind::Silence, 0.5, {}});
      script.segments.push_back({SegmentKind::Command, 1.5, labels[order[i]]});
      script.segments.push_back({SegmentKind::Silence, 2.0, {}});
    }
    const auto stream = generate_stream(world, speaker, script, condition, derive_seed(config.seed, {0x57E4, trial}),
                                        config.kws);

    TrialStats stats;
    stats.mean_shots = static_cast<double>(model->trained_on()) / static_cast<double>(labels.size());
    stats.windows = stream.windows.size();
    std::vector<bool> keyword_hit(stream.truth.size(), false);
    std::map<std::uint64_t, std::ptrdiff_t> activation_truth;  // utterance id -> truth index of keyword, -1 = false
    std::vector<std::uint64_t> to_report;
    engine.reset();
    for (const auto& w : stream.windows) {
      for (const auto& ev : engine.process_window(w.embedding, w.t_ms)) {
        if (ev.kind == EventKind::KeywordDetected) {
          std::ptrdiff_t match = -1;
          for (std::size_t j = 0; j < stream.truth.size(); ++j) {
            const auto& t = stream.truth[j];
            if (t.kind == SegmentKind::Keyword && ev.t_ms > t.start_ms && ev.t_ms <= t.end_ms + window_ms) {
              match = static_cast<std::ptrdiff_t>(j);
              keyword_hit[j] = true;
              break;
            }
          }
          activation_truth[ev.utterance_id] = match;
          if (match < 0) {
            ++stats.false_activations;
            to_report.push_back(ev.utterance_id);
          }
        } else if (ev.kind == EventKind::UtteranceReady) {
          const std::ptrdiff_t kw = activation_truth.at(ev.utterance_id);
          const auto next = static_cast<std::size_t>(kw + 1);
          if (kw < 0 || next >= stream.truth.size() || stream.truth[next].kind != SegmentKind::Command) continue;
          const std::string& truth_label = stream.truth[next].label;
          const Prediction pred = model->predict(*ev.utterance);
          ++stats.recognized;
          const bool right = pred.label == truth_label;
          stats.correct += right;
          if (config.with_learning) {
            registry.add_pending(ev.utterance_id, *ev.utterance, pred);
            registry.resolve_prediction(ev.utterance_id, right ? Feedback::confirm() : Feedback::correct(truth_label),
                                        ev.t_ms);
          }
        }
      }
    }
    for (std::size_t j = 0; j < stream.truth.size(); ++j) {
      if (stream.truth[j].kind == SegmentKind::Keyword) {
        ++stats.issued;
        if (!keyword_hit[j]) ++stats.missed_keywords;
      }
    }
    stats.accuracy = stats.recognized ? static_cast<double>(stats.correct) / static_cast<double>(stats.recognized) : 0.0;
    curve.trials.push_back(stats);

    if (config.with_learning) {
      if (config.report_misactivations && !to_report.empty()) {
        std::vector<UnitEmbedding> negatives;
        for (std::uint64_t id : to_report) engine.report_misactivation(id, negatives);
        for (auto& n : negatives) registry.add_keyword_negative(std::move(n));
        engine.set_references(registry.keyword_references(config.fit));
      }
      model = registry.retrain(config.fit).classifier;
    }
  }
  return curve;
}

std::vector<ReplayStats> run_misactivation_replays(const SimWorld& world, const MisactivationConfig& config) {
  const std::size_t speaker = 0;
  const auto& labels = world.command_labels();
  if (labels.empty()) throw Error(Errc::InsufficientData, "world has no commands");

  CommandRegistry registry(world.dim(), config.kws);
  std::vector<UnitEmbedding> keyword_samples;
  std::vector<UnitEmbedding> silence_samples;
  for (std::size_t i = 0; i < config.keyword_samples; ++i) {
    keyword_samples.push_back(world.sample_keyword(speaker, 0, derive_seed(config.seed, {0x4B57, i})));
  }
  for (std::size_t i = 0; i < config.non_speaking_samples; ++i) {
    silence_samples.push_back(world.sample_silence(speaker, 0, derive_seed(config.seed, {0x5113, i})));
  }
  KwsEngine engine(config.kws);
  engine.set_references(registry.initialize_keyword(keyword_samples, silence_samples, config.fit));

  auto rng = rng_for(config.seed, {0xFA1});
  StreamScript script;
  script.segments.push_back({SegmentKind::Silence, 1.5, {}});
  std::vector<bool> is_distractor(config.commands_per_stream + config.distractors_per_stream, false);
  std::fill(is_distractor.begin(), is_distractor.begin() + static_cast<std::ptrdiff_t>(config.distractors_per_stream), true);
  std::shuffle(is_distractor.begin(), is_distractor.end(), rng);
  for (bool distractor : is_distractor) {
    if (distractor) {
      script.segments.push_back({SegmentKind::Distractor, 1.5, {}});
    } else {
      const std::size_t c = std::uniform_int_distribution<std::size_t>(0, labels.size() - 1)(rng);
      script.segments.push_back({SegmentKind::Keyword, 1.0, {}});
      script.segments.push_back({SegmentKind::Silence, 0.5, {}});
      script.segments.push_back({SegmentKind::Command, 1.5, labels[c]});
    }
    script.segments.push_back({SegmentKind::Silence, 2.0, {}});
  }
  const auto stream = generate_stream(world, speaker, script, 0, derive_seed(config.seed, {0x57E4}), config.kws);

  std::vector<ReplayStats> out;
  const std::int64_t window_ms = config.kws.window_ms();
  for (std::size_t replay = 0; replay < config.replays; ++replay) {
    ReplayStats stats;
    std::vector<bool> hit(stream.truth.size(), false);
    std::vector<std::uint64_t> to_report;
    engine.reset();
    for (const auto& w : stream.windows) {
      for (const auto& ev : engine.process_window(w.embedding, w.t_ms)) {
        if (ev.kind != EventKind::KeywordDetected) continue;
        ++stats.activations;
        bool matched = false;
        for (std::size_t j = 0; j < stream.truth.size(); ++j) {
          const auto& t = stream.truth[j];
          if (t.kind == SegmentKind::Keyword && ev.t_ms > t.start_ms && ev.t_ms <= t.end_ms + window_ms) {
            hit[j] = matched = true;
            break;
          }
        }
        if (!matched) {
          ++stats.false_activations;
          to_report.push_back(ev.utterance_id);
        }
      }
    }
    for (std::size_t j = 0; j < stream.truth.size(); ++j) {
      if (stream.truth[j].kind != SegmentKind::Keyword) continue;
      ++stats.keywords;
      if (!hit[j]) ++stats.missed_keywords;
    }
    out.push_back(stats);
    if (!to_report.empty()) {
      std::vector<UnitEmbedding> negatives;
      for (std::uint64_t id : to_report) engine.report_misactivation(id, negatives);
      for (auto& n : negatives) registry.add_keyword_negative(std::move(n));
      engine.set_references(registry.keyword_references(config.fit));
    }
  }
  return out;
}

AdapterUtility run_adapter_utility(const SimParams& params, const AdapterUtilityConfig& config) {
  if (config.train_speakers == 0 || config.classes < 2 || config.episodes == 0 || config.test_repetitions < 1) {
    throw Error(Errc::InsufficientData, "adapter utility needs speakers, >= 2 classes and episodes");
  }
  SimParams p = params;
  p.num_speakers = config.train_speakers + 1;
  if (config.classes > p.num_commands) throw Error(Errc::InsufficientData, "more classes than commands");
  const SimWorld world(p, config.seed);

  std::vector<std::size_t> train_speakers(config.train_speakers);
  std::iota(train_speakers.begin(), train_speakers.end(), std::size_t{0});
  AdapterTrainConfig train = config.train;
  train.seed = derive_seed(config.seed, {0xADA});
  const auto trained = train_adapter(raw_feature_set(world, train_speakers, config.train_repetitions), train);

  const std::size_t held_out[] = {config.train_speakers};
  const std::size_t reps = config.test_repetitions + 1;
  const RawFeatureSet test = raw_feature_set(world, held_out, reps, 1u << 30);
  std::vector<UnitEmbedding> raw_rows;
  for (Eigen::Index i = 0; i < test.features.rows(); ++i) {
    const Eigen::VectorXd row = test.features.row(i).transpose();
    raw_rows.push_back(normalize(std::span<const double>(row.data(), static_cast<std::size_t>(row.size()))));
  }
  const auto adapted_rows = trained.adapter.embed_rows(test.features);

  std::vector<std::vector<std::size_t>> by_class(p.num_commands);
  for (std::size_t i = 0; i < test.labels.size(); ++i) by_class[static_cast<std::size_t>(test.labels[i])].push_back(i);

  auto episode_accuracy = [&](const std::vector<UnitEmbedding>& rows, const std::vector<std::size_t>& shots,
                              const std::vector<std::size_t>& queries) {
    std::vector<LabeledSample> samples;
    for (std::size_t i : shots) samples.push_back({rows[i], std::to_string(test.labels[i]), std::nullopt, 0});
    const LinearClassifier clf = fit(samples, config.fit);
    std::size_t hits = 0;
    for (std::size_t i : queries) hits += clf.predict(rows[i]).label == std::to_string(test.labels[i]);
    return static_cast<double>(hits) / static_cast<double>(queries.size());
  };

  AdapterUtility out;
  out.loss_trace = trained.loss_trace;
  for (std::size_t e = 0; e < config.episodes; ++e) {
    auto rng = rng_for(config.seed, {0xE915, e});
    std::vector<std::size_t> classes(p.num_commands);
    std::iota(classes.begin(), classes.end(), std::size_t{0});
    std::shuffle(classes.begin(), classes.end(), rng);
    std::vector<std::size_t> shots;
    std::vector<std::size_t> queries;
    for (std::size_t k = 0; k < config.classes; ++k) {
      auto pool = by_class[classes[k]];
      std::shuffle(pool.begin(), pool.end(), rng);
      shots.push_back(pool.front());
      queries.insert(queries.end(), pool.begin() + 1, pool.end());
    }
    out.raw_accuracy += episode_accuracy(raw_rows, shots, queries) / static_cast<double>(config.episodes);
    out.adapter_accuracy += episode_accuracy(adapted_rows, shots, queries) / static_cast<double>(config.episodes);
  }
  return out;
}

}  // namespace lipcmd
