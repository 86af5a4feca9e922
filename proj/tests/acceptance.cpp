// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per headline criterion.
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#include "lipcmd/contrastive.hpp"
#include "lipcmd/eer.hpp"
#include "lipcmd/error.hpp"
#include "lipcmd/eval.hpp"
#include "lipcmd/registry.hpp"
#include "lipcmd/session.hpp"
#include "registry_gen.hpp"

using namespace lipcmd;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void run(const char* name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  if (!o.pass) ++failures;
  std::printf("%s %s:%s (%.1fs)\n", o.pass ? "PASS" : "FAIL", name, o.detail.str().c_str(), seconds_since(t0));
  std::fflush(stdout);
}

// ---- contrastive ----------------------------------------------------------

long double naive_infonce(const Eigen::MatrixXd& s) {
  const auto n = s.rows();
  long double total = 0.0L;
  for (Eigen::Index i = 0; i < n; ++i) {
    long double zr = 0.0L, zc = 0.0L;
    for (Eigen::Index j = 0; j < n; ++j) {
      zr += std::exp(static_cast<long double>(s(i, j)));
      zc += std::exp(static_cast<long double>(s(j, i)));
    }
    total += 2.0L * -static_cast<long double>(s(i, i)) + std::log(zr) + std::log(zc);
  }
  return total / (2.0L * static_cast<long double>(n));
}

void check_infonce(Outcome& o) {
  const auto t0 = Clock::now();
  double worst_uniform = 0.0;
  for (int n : {2, 4, 8}) {
    const Eigen::MatrixXd s = Eigen::MatrixXd::Constant(n, n, 0.37);
    worst_uniform = std::max(worst_uniform, std::abs(infonce_loss(s) - std::log(static_cast<double>(n))));
  }
  o.require(worst_uniform < 1e-9, "uniform loss = ln N");

  std::mt19937_64 rng(20240);
  std::normal_distribution<double> g;
  double worst_oracle = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 15;
    Eigen::MatrixXd s(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) s(i, j) = 4.0 * g(rng);
    worst_oracle = std::max(worst_oracle, std::abs(infonce_loss(s) - static_cast<double>(naive_infonce(s))));
  }
  o.require(worst_oracle < 1e-9, "oracle agreement");

  double worst_grad = 0.0;
  const double h = 1e-5;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 7;
    const int din = 2 + (trial * 5) % 15;
    const int dout = 2 + (trial * 3) % 15;
    RawPairBatch b;
    b.a.resize(n, din);
    b.b.resize(n, din);
    for (int i = 0; i < n; ++i) {
      for (int d = 0; d < din; ++d) {
        b.a(i, d) = g(rng);
        b.b(i, d) = 0.5 * b.a(i, d) + g(rng);
      }
      b.class_ids.push_back(i);
    }
    LinearAdapter a{RowMatrix(dout, din), Eigen::VectorXd(dout)};
    for (int i = 0; i < dout; ++i) {
      for (int j = 0; j < din; ++j) a.weight(i, j) = g(rng) / std::sqrt(static_cast<double>(din));
      a.bias(i) = 0.1 * g(rng);
    }
    const auto lg = infonce_gradient(b, a);
    auto rel = [](double x, double y) { return std::abs(x - y) / std::max(1.0, std::abs(x) + std::abs(y)); };
    for (int i = 0; i < dout; ++i) {
      for (int j = 0; j < din; ++j) {
        LinearAdapter p = a, m = a;
        p.weight(i, j) += h;
        m.weight(i, j) -= h;
        worst_grad = std::max(worst_grad, rel(lg.gradient.weight(i, j), (adapter_loss(b, p) - adapter_loss(b, m)) / (2 * h)));
      }
      LinearAdapter p = a, m = a;
      p.bias(i) += h;
      m.bias(i) -= h;
      worst_grad = std::max(worst_grad, rel(lg.gradient.bias(i), (adapter_loss(b, p) - adapter_loss(b, m)) / (2 * h)));
    }
  }
  o.require(worst_grad < 1e-5, "finite-difference gradient");
  const double runtime = seconds_since(t0);
  o.require(runtime < 10.0, "runtime < 10 s");
  o.detail << " uniform_err=" << worst_uniform << " oracle_err=" << worst_oracle << " grad_rel_err=" << worst_grad
           << " runtime_s=" << runtime;
}

// ---- adapter --------------------------------------------------------------

void check_adapter(Outcome& o) {
  double raw = 0.0, adapted = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    AdapterUtilityConfig cfg;
    cfg.seed = seed;
    const auto u = run_adapter_utility(calibrated_params(), cfg);
    raw += u.raw_accuracy / 20.0;
    adapted += u.adapter_accuracy / 20.0;
  }
  o.require(adapted >= raw + 0.05, "adapter >= raw + 0.05");
  o.detail << " raw=" << raw << " adapter=" << adapted << " gain=" << adapted - raw;
}

// ---- few-shot -------------------------------------------------------------

void check_fewshot(Outcome& o) {
  const auto t0 = Clock::now();
  const std::vector<std::size_t> ms = {5, 10, 15, 20, 25};
  const std::vector<std::size_t> ns = {1, 4};
  std::map<std::pair<std::size_t, std::size_t>, double> mean;
  const std::size_t seeds = 200;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto data = generate_dataset(SimWorld(calibrated_params(), seed), 5);
    ShotsConfig cfg;
    cfg.command_counts = ms;
    cfg.shot_counts = ns;
    cfg.repeats = 1;
    cfg.seed = seed;
    const auto r = run_shots_experiment(data, cfg);
    for (std::size_t m : ms)
      for (std::size_t n : ns)
        mean[{m, n}] += r.find({{"M", std::to_string(m)}, {"N", std::to_string(n)}}).summary.mean / seeds;
  }
  const double one = mean[{25, 1}], four = mean[{25, 4}];
  o.require(one >= 0.85 && one <= 0.93, "1-shot F1 in [0.85, 0.93]");
  o.require(four > one && four >= 0.96, "4-shot > 1-shot and >= 0.96");
  for (std::size_t n : ns) {
    for (std::size_t i = 1; i < ms.size(); ++i) {
      // a step may rise by at most 0.005
      o.require(mean[{ms[i - 1], n}] - mean[{ms[i], n}] >= -0.005,
                "non-increasing in M at N=" + std::to_string(n) + " M=" + std::to_string(ms[i]));
    }
  }
  const double runtime = seconds_since(t0);
  o.require(runtime < 300.0, "runtime < 5 min");
  o.detail << " f1_1shot=" << one << " f1_4shot=" << four << " by_M(N=1)=";
  for (std::size_t m : ms) o.detail << mean[{m, 1}] << (m == 25 ? "" : "/");
  o.detail << " by_M(N=4)=";
  for (std::size_t m : ms) o.detail << mean[{m, 4}] << (m == 25 ? "" : "/");
  o.detail << " runtime_s=" << runtime;
}

// ---- cross-condition ------------------------------------------------------

void check_cross(Outcome& o) {
  const std::size_t seeds = 20;
  std::map<std::string, std::vector<double>> cross;  // group/left_out -> mean per shot
  double loco = 0.0, in_cond = 0.0;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const auto data = generate_dataset(SimWorld(calibrated_params(), seed), 5);
    CrossConfig cc;
    cc.repeats = 3;
    cc.seed = seed;
    const auto r = run_cross_condition(data, cc);
    for (const auto& cell : r.cells) {
      auto& v = cross[cell.at("group") + "/" + cell.at("left_out")];
      const auto shot = std::stoul(cell.at("shots"));
      if (v.size() < cc.shot_counts.size()) v.resize(cc.shot_counts.size(), 0.0);
      v[shot - 1] += cell.summary.mean / seeds;
    }
    LocoConfig lc;
    lc.repeats = 3;
    lc.seed = seed;
    const auto l = run_leave_one_condition_out(data, lc);
    double left_mean = 0.0;
    for (const auto& cell : l.cells) {
      if (cell.at("left_out") == "in_condition") {
        in_cond += cell.summary.mean / seeds;
      } else {
        left_mean += cell.summary.mean / 7.0;
      }
    }
    loco += left_mean / seeds;
  }
  double worst_step = 1.0;
  for (const auto& [name, v] : cross) {
    for (std::size_t i = 1; i < v.size(); ++i) {
      worst_step = std::min(worst_step, v[i] - v[i - 1]);
      o.require(v[i] - v[i - 1] >= -0.005, name + " shots " + std::to_string(i + 1));
    }
  }
  o.require(std::abs(loco - in_cond) <= 0.05, "LOCO within 0.05 of in-condition");
  o.detail << " cells=" << cross.size() << " worst_shot_step=" << worst_step << " loco_6shot=" << loco
           << " in_condition_6shot=" << in_cond;
}

// ---- EER ------------------------------------------------------------------

EerResult exhaustive(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::set<double> distinct(pos.begin(), pos.end());
  distinct.insert(neg.begin(), neg.end());
  const std::vector<double> sorted(distinct.begin(), distinct.end());
  std::vector<double> cands = {-std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) cands.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  cands.push_back(std::numeric_limits<double>::infinity());
  EerResult best;
  double gap = std::numeric_limits<double>::infinity();
  for (double t : cands) {
    double fp = 0, fn = 0;
    for (double s : neg) fp += s >= t;
    for (double s : pos) fn += s < t;
    const double fpr = fp / static_cast<double>(neg.size()), fnr = fn / static_cast<double>(pos.size());
    if (std::abs(fpr - fnr) < gap) {
      gap = std::abs(fpr - fnr);
      best = {0.5 * (fpr + fnr), t, fpr, fnr};
    }
  }
  return best;
}

void check_eer(Outcome& o) {
  std::mt19937_64 rng(1000);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> size(1, 60);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> pos(static_cast<std::size_t>(size(rng))), neg(static_cast<std::size_t>(size(rng)));
    const bool coarse = trial % 2 == 0;
    auto draw = [&](double mu) { return coarse ? std::round(4 * (mu + g(rng))) / 4 : mu + g(rng); };
    for (auto& v : pos) v = draw(0.05 * (trial % 40));
    for (auto& v : neg) v = draw(0.0);
    const auto a = compute_eer(pos, neg);
    const auto b = exhaustive(pos, neg);
    mismatches += std::abs(a.eer - b.eer) > 1e-12 || a.threshold != b.threshold;
  }
  o.require(mismatches == 0, "oracle agreement");
  const std::vector<double> hi = {0.9, 0.8, 0.85}, lo = {0.1, 0.3, 0.2, 0.0};
  const double separated = compute_eer(hi, lo).eer;
  o.require(separated == 0.0, "separated masses give 0");
  double worst_same = 0.0;
  for (int n : {7, 50, 500}) {
    std::vector<double> xs(static_cast<std::size_t>(n));
    for (auto& v : xs) v = g(rng);
    const double e = compute_eer(xs, xs).eer;
    worst_same = std::max(worst_same, std::abs(e - 0.5) * n);
    o.require(std::abs(e - 0.5) <= 1.0 / n, "identical distributions give 0.5 at n=" + std::to_string(n));
  }
  o.detail << " oracle_mismatches=" << mismatches << " separated_eer=" << separated
           << " identical_dev_in_samples=" << worst_same;
}

// ---- keyword spotting -----------------------------------------------------

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_kws(Outcome& o) {
  const std::string data = LIPCMD_TEST_DATA;
  std::ifstream replay(data + "/golden_replay.ndjson");
  o.require(static_cast<bool>(replay), "golden replay present");
  SessionOptions opts;
  opts.report_durations = false;
  Session session(CommandRegistry(128), opts);
  std::ostringstream transcript;
  run_stream(session, replay, transcript);
  const bool golden = transcript.str() == slurp(data + "/golden_transcript.ndjson");
  o.require(golden, "golden transcript byte-exact");

  // timing invariants over seeded streams, including over-long commands
  const KwsConfig kws;
  std::size_t cutoffs = 0, eos = 0;
  std::int64_t min_eos = std::numeric_limits<std::int64_t>::max();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SimWorld w(calibrated_params(), seed);
    const std::size_t k = seed % 7;
    std::vector<UnitEmbedding> pos, non;
    for (std::uint64_t i = 0; i < 3; ++i) {
      pos.push_back(w.sample_keyword(0, k, 1000 + i));
      non.push_back(w.sample_silence(0, k, 1000 + i));
    }
    KwsEngine engine(kws);
    engine.set_references({centroid(pos), centroid(non), std::make_shared<LinearClassifier>(fit_binary_kws(pos, non))});
    std::ostringstream script;
    std::mt19937_64 rng(seed);
    script << "silence 1.5\n";
    for (int i = 0; i < 8; ++i) {
      const double len = (rng() % 3 == 0) ? 5.0 : 1.0 + 0.5 * static_cast<double>(rng() % 3);
      script << "keyword 1\ncommand " << len << ' ' << w.command_labels()[rng() % 25] << "\nsilence 2\n";
      if (rng() % 2) script << "distractor 1.5\nsilence 2\n";
    }
    const auto stream = generate_stream(w, 0, StreamScript::parse(script.str()), k, seed);
    std::map<std::uint64_t, std::int64_t> started;
    for (const auto& win : stream.windows) {
      for (const auto& ev : engine.process_window(win.embedding, win.t_ms)) {
        if (ev.kind == EventKind::KeywordDetected) started[ev.utterance_id] = ev.t_ms;
        if (ev.kind == EventKind::MaxLengthCutoff) {
          ++cutoffs;
          o.require(ev.t_ms - started.at(ev.utterance_id) == 4000, "cutoff at exactly 4.0 s");
        }
        if (ev.kind == EventKind::EndOfSpeech) {
          ++eos;
          min_eos = std::min(min_eos, ev.t_ms - started.at(ev.utterance_id));
          o.require(ev.t_ms - started.at(ev.utterance_id) >= 1500, "EOS not before 1.5 s");
        }
      }
    }
  }
  o.require(cutoffs > 0 && eos > 0, "cutoffs and EOS observed");

  SimParams p = calibrated_params();
  p.distractor_keyword_overlap = 2.0;
  std::vector<std::size_t> false_acts(5, 0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    MisactivationConfig mc;
    mc.seed = seed;
    const auto stats = run_misactivation_replays(SimWorld(p, seed), mc);
    for (std::size_t r = 0; r < stats.size(); ++r) false_acts[r] += stats[r].false_activations;
  }
  for (std::size_t r = 1; r < false_acts.size(); ++r) {
    o.require(false_acts[r] <= false_acts[r - 1], "false activations non-increasing at replay " + std::to_string(r + 1));
  }
  o.detail << " golden=" << (golden ? "exact" : "differs") << " cutoffs=" << cutoffs << " eos=" << eos
           << " min_eos_ms=" << min_eos << " false_activations_by_replay=";
  for (std::size_t r = 0; r < false_acts.size(); ++r) o.detail << false_acts[r] << (r + 1 < false_acts.size() ? "/" : "");
}

// ---- incremental learning -------------------------------------------------

void check_incremental(Outcome& o) {
  SimParams p = calibrated_params();
  p.num_commands = 30;
  const std::size_t seeds = 100;
  std::vector<double> learn(6, 0.0), frozen(6, 0.0);
  std::vector<double> xs, ys;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    const SimWorld w(p, seed);
    IncrementalConfig cfg;
    cfg.seed = seed;
    const auto with = run_incremental_curve(w, cfg);
    cfg.with_learning = false;
    const auto without = run_incremental_curve(w, cfg);
    for (std::size_t t = 0; t < 6; ++t) {
      learn[t] += with.trials[t].accuracy / seeds;
      frozen[t] += without.trials[t].accuracy / seeds;
      xs.push_back(static_cast<double>(t + 1));
      ys.push_back(without.trials[t].accuracy);
    }
  }
  const auto slope = ols_slope(xs, ys);
  o.require(learn[5] - learn[0] >= 0.10, "trial 6 - trial 1 >= 0.10");
  o.require(slope.ci_low <= 0.0 && 0.0 <= slope.ci_high, "frozen slope CI contains 0");
  o.detail << " learning=";
  for (std::size_t t = 0; t < 6; ++t) o.detail << learn[t] << (t < 5 ? "/" : "");
  o.detail << " frozen=";
  for (std::size_t t = 0; t < 6; ++t) o.detail << frozen[t] << (t < 5 ? "/" : "");
  o.detail << " gain=" << learn[5] - learn[0] << " frozen_slope=" << slope.slope << " ci=[" << slope.ci_low << ", "
           << slope.ci_high << "]";
}

// ---- latency --------------------------------------------------------------

void check_latency(Outcome& o) {
  SimParams p = calibrated_params();
  p.dim = 500;
  p.num_commands = 30;
  const SimWorld w(p, 0);
  CommandRegistry reg(p.dim);
  std::vector<UnitEmbedding> kw, non;
  for (std::uint64_t i = 0; i < 3; ++i) {
    kw.push_back(w.sample_keyword(0, 0, i));
    non.push_back(w.sample_silence(0, 0, i));
  }
  reg.initialize_keyword(kw, non);
  for (std::size_t c = 0; c < 30; ++c)
    for (std::uint64_t s = 0; s < 5; ++s) reg.add_sample(w.command_labels()[c], w.sample_utterance(0, c, s % 7, 100 * c + s));
  double total_ms = 0.0, worst_retrain = 0.0;
  for (int run = 0; run < 10; ++run) {
    const auto r = reg.retrain();
    total_ms += r.duration.count();
    worst_retrain = std::max(worst_retrain, r.duration.count());
  }
  const double mean_retrain = total_ms / 10.0;
  o.require(worst_retrain < 2500.0, "retrain < 2.5 s");

  // service path: window message in, prediction out
  reg.set_mode(LearningMode::ActiveLearning);
  Session session(reg);
  std::ostringstream script;
  script << "silence 1.5\n";
  for (int i = 0; i < 20; ++i) script << "keyword 1\ncommand 1.5 " << w.command_labels()[i] << "\nsilence 2\n";
  const auto stream = generate_stream(w, 0, StreamScript::parse(script.str()), 0, 77);
  double worst_window = 0.0, worst_prediction = 0.0;
  std::size_t predictions = 0;
  for (const auto& win : stream.windows) {
    nlohmann::json msg = {{"type", "window"}, {"t_ms", win.t_ms}, {"embedding", win.embedding.values()}};
    const std::string line = msg.dump();
    const auto t0 = Clock::now();
    const auto out = session.handle_line(line);
    const double ms = seconds_since(t0) * 1000.0;
    worst_window = std::max(worst_window, ms);
    for (const auto& l : out) {
      if (l.find("\"type\":\"prediction\"") != std::string::npos) {
        ++predictions;
        worst_prediction = std::max(worst_prediction, ms);
      }
    }
  }
  o.require(predictions > 0, "predictions produced");
  o.require(worst_prediction < 50.0 && worst_window < 50.0, "window-to-prediction < 50 ms");
  o.detail << " retrain_mean_ms=" << mean_retrain << " retrain_max_ms=" << worst_retrain
           << " predictions=" << predictions << " max_prediction_ms=" << worst_prediction
           << " max_window_ms=" << worst_window;
}

// ---- persistence ----------------------------------------------------------

bool bit_equal(const UnitEmbedding& a, const UnitEmbedding& b) {
  if (a.dim() != b.dim()) return false;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  }
  return true;
}

bool same_list(const std::vector<UnitEmbedding>& a, const std::vector<UnitEmbedding>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bit_equal(a[i], b[i])) return false;
  return true;
}

void check_persistence(Outcome& o) {
  const auto dir = std::filesystem::temp_directory_path() / ("lipcmd_accept_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(9);
  std::size_t ok = 0, samples = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto reg = test::random_registry(rng);
    const auto path = dir / "registry.json";
    reg.save(path);
    const auto back = CommandRegistry::load(path);
    bool same = back == reg && back.commands().size() == reg.commands().size();
    for (std::size_t c = 0; same && c < reg.commands().size(); ++c) {
      const auto& a = reg.commands()[c];
      const auto& b = back.commands()[c];
      same = a.label == b.label && a.samples.size() == b.samples.size();
      for (std::size_t s = 0; same && s < a.samples.size(); ++s) {
        same = bit_equal(a.samples[s].embedding, b.samples[s].embedding) && a.samples[s].label == b.samples[s].label &&
               a.samples[s].condition == b.samples[s].condition && a.samples[s].t_ms == b.samples[s].t_ms;
        ++samples;
      }
    }
    same = same && same_list(reg.keyword().positives, back.keyword().positives) &&
           same_list(reg.keyword().negatives, back.keyword().negatives) &&
           same_list(reg.keyword().non_speaking, back.keyword().non_speaking);
    ok += same;
  }
  std::filesystem::remove_all(dir);
  o.require(ok == 1000, "all registries round-trip");
  o.detail << " exact=" << ok << "/1000 samples_checked=" << samples;
}

}  // namespace

int main() {
  run("infonce_correctness", check_infonce);
  run("adapter_utility", check_adapter);
  run("fewshot_trends", check_fewshot);
  run("cross_condition", check_cross);
  run("eer", check_eer);
  run("kws_state_machine", check_kws);
  run("incremental_learning", check_incremental);
  run("latency", check_latency);
  run("persistence", check_persistence);
  std::printf("%s: %d failing criteria\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
