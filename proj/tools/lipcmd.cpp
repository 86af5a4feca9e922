// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "lipcmd/error.hpp"
#include "lipcmd/eval.hpp"
#include "lipcmd/registry.hpp"
#include "lipcmd/rng.hpp"
#include "lipcmd/session.hpp"
#include "lipcmd/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lipcmd;

namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  std::string config;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::InvalidConfig, path + " is not valid JSON");
  return doc;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Loaded --config document: {"sim": {...}, "kws": {...}, "fit": {...}}.
struct Settings {
  SimParams sim = calibrated_params();
  KwsConfig kws;
  FitConfig fit;
};

Settings load_settings(const std::string& path) {
  Settings s;
  if (path.empty()) return s;
  const json doc = read_json_file(path);
  try {
    if (const auto it = doc.find("sim"); it != doc.end()) {
      auto& p = s.sim;
      p.dim = it->value("dim", p.dim);
      p.num_commands = it->value("num_commands", p.num_commands);
      p.num_speakers = it->value("num_speakers", p.num_speakers);
      p.num_conditions = it->value("num_conditions", p.num_conditions);
      p.speaker_weight = it->value("speaker_weight", p.speaker_weight);
      p.condition_weight = it->value("condition_weight", p.condition_weight);
      p.noise = it->value("noise", p.noise);
      p.keyword_noise = it->value("keyword_noise", p.keyword_noise);
      p.voiced_shift = it->value("voiced_shift", p.voiced_shift);
      p.silence_noise = it->value("silence_noise", p.silence_noise);
      p.window_jitter = it->value("window_jitter", p.window_jitter);
      p.speech_gain = it->value("speech_gain", p.speech_gain);
      p.distractor_keyword_overlap = it->value("distractor_keyword_overlap", p.distractor_keyword_overlap);
      p.raw_nuisance_rank = it->value("raw_nuisance_rank", p.raw_nuisance_rank);
      p.raw_nuisance_scale = it->value("raw_nuisance_scale", p.raw_nuisance_scale);
      p.command_labels = it->value("command_labels", p.command_labels);
    }
    if (const auto it = doc.find("fit"); it != doc.end()) {
      s.fit.l2 = it->value("l2", s.fit.l2);
      s.fit.learning_rate = it->value("learning_rate", s.fit.learning_rate);
      s.fit.tol = it->value("tol", s.fit.tol);
      s.fit.max_iters = it->value("max_iters", s.fit.max_iters);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("config: ") + e.what());
  }
  if (const auto it = doc.find("kws"); it != doc.end()) s.kws = kws_config_from_json(*it);
  return s;
}

json sim_params_json(const SimParams& p) {
  return {{"dim", p.dim},
          {"num_commands", p.num_commands},
          {"num_speakers", p.num_speakers},
          {"num_conditions", p.num_conditions},
          {"speaker_weight", p.speaker_weight},
          {"condition_weight", p.condition_weight},
          {"noise", p.noise},
          {"keyword_noise", p.keyword_noise},
          {"voiced_shift", p.voiced_shift},
          {"silence_noise", p.silence_noise},
          {"window_jitter", p.window_jitter},
          {"speech_gain", p.speech_gain},
          {"distractor_keyword_overlap", p.distractor_keyword_overlap}};
}

// Writes to --out when given, else stdout.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
    return;
  }
  if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write " + out);
  f << text;
}

json floats_json(const UnitEmbedding& e) {
  json arr = json::array();
  for (float v : e.values()) arr.push_back(v);
  return arr;
}

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--seed", c.seed, "Master RNG seed");
  if (with_out) cmd->add_option("--out", c.out, "Output file or directory");
  cmd->add_option("--config", c.config, "JSON config with optional sim, kws and fit sections")
      ->check(CLI::ExistingFile);
}

// ---- serve ----

struct ServeArgs {
  Common common;
  std::string registry;
  bool fresh = true;
  std::string replay;
  bool stdio = false;
  std::uint16_t port = 7420;
  std::size_t dim = 500;
  bool no_timing = false;
};

int run_serve(const ServeArgs& a) {
  const Settings settings = load_settings(a.common.config);
  std::string path = a.registry;
  if (path.empty()) {
    if (const char* env = std::getenv("LIPCMD_REGISTRY")) path = env;
  }
  std::optional<CommandRegistry> registry;
  if (!path.empty() && fs::exists(path)) {
    registry = CommandRegistry::load(path);
  } else if (a.fresh) {
    registry.emplace(a.dim, settings.kws);
  } else {
    throw Error(Errc::IoError, path.empty() ? "no registry given (use --registry or LIPCMD_REGISTRY, or --fresh)"
                                            : "registry " + path + " does not exist and --fresh=false");
  }
  SessionOptions options;
  if (!path.empty()) options.registry_path = path;
  options.report_durations = !a.no_timing;
  options.fit = settings.fit;
  Session session(std::move(*registry), options);

  if (!a.replay.empty()) {
    std::ifstream in(a.replay);
    if (!in) throw Error(Errc::IoError, "cannot open replay " + a.replay);
    if (a.common.out.empty()) {
      run_stream(session, in, std::cout);
    } else {
      std::ofstream out(a.common.out, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(Errc::IoError, "cannot write " + a.common.out);
      run_stream(session, in, out);
    }
    return 0;
  }
  if (a.stdio) {
    run_stream(session, std::cin, std::cout);
    return 0;
  }
  serve_tcp(session, a.port, [](std::uint16_t port) {
    std::cerr << "listening on 127.0.0.1:" << port << std::endl;
  });
  return 0;
}

// ---- train-adapter ----

struct AdapterArgs {
  Common common;
  AdapterTrainConfig train;
  std::size_t speakers = 3;
  std::size_t repetitions = 2;
};

int run_train_adapter(const AdapterArgs& a) {
  Settings settings = load_settings(a.common.config);
  settings.sim.num_speakers = std::max(settings.sim.num_speakers, a.speakers);
  const SimWorld world(settings.sim, a.common.seed);
  std::vector<std::size_t> speakers(a.speakers);
  for (std::size_t i = 0; i < speakers.size(); ++i) speakers[i] = i;
  AdapterTrainConfig cfg = a.train;
  cfg.seed = a.common.seed;
  const auto result = train_adapter(raw_feature_set(world, speakers, a.repetitions), cfg);
  std::ostringstream csv;
  csv.precision(12);
  csv << "epoch,loss\n";
  for (std::size_t i = 0; i < result.loss_trace.size(); ++i) csv << i << ',' << result.loss_trace[i] << '\n';
  emit(a.common.out, csv.str());
  return 0;
}

// ---- calibrate-sim ----

struct CalibrateArgs {
  Common common;
  CalibrationTarget target;
};

int run_calibrate(const CalibrateArgs& a) {
  const Settings settings = load_settings(a.common.config);
  const auto result = calibrate_nothrow(settings.sim, a.target);
  json trace = json::array();
  for (const auto& [sigma, f1] : result.trace) trace.push_back({{"sigma", sigma}, {"f1", f1}});
  const json doc = {{"in_band", result.in_band},
                    {"band", {a.target.low, a.target.high}},
                    {"seeds", a.target.seeds},
                    {"sigma", result.params.noise},
                    {"achieved_f1", result.achieved},
                    {"achieved_std", result.achieved_std},
                    {"params", sim_params_json(result.params)},
                    {"trace", trace}};
  emit(a.common.out, doc.dump(2) + "\n");
  if (!result.in_band) {
    std::cerr << "error: target unreachable; nearest sigma " << result.params.noise << " gives " << result.achieved
              << "\n";
    return 1;
  }
  return 0;
}

// ---- simulate ----

struct SimulateArgs {
  Common common;
  std::string script;
  std::string annotations;
  std::size_t speaker = 0;
  std::size_t condition = 0;
  std::size_t keyword_samples = 3;
  bool windows_only = false;
};

int run_simulate(const SimulateArgs& a) {
  const Settings settings = load_settings(a.common.config);
  const StreamScript script = StreamScript::parse(read_text_file(a.script));
  const SimWorld world(settings.sim, a.common.seed);
  const auto stream =
      generate_stream(world, a.speaker, script, a.condition, derive_seed(a.common.seed, {0x57E4}), settings.kws);

  std::ostringstream out;
  if (!a.windows_only) {
    out << json{{"type", "hello"}, {"client", "simulate"}}.dump() << '\n';
    for (std::size_t i = 0; i < a.keyword_samples; ++i) {
      const auto kw = world.sample_keyword(a.speaker, a.condition, derive_seed(a.common.seed, {0x4B57, i}));
      out << json{{"type", "inject_sample"}, {"role", "keyword"}, {"embedding", floats_json(kw)}}.dump() << '\n';
    }
    for (std::size_t i = 0; i < a.keyword_samples; ++i) {
      const auto sil = world.sample_silence(a.speaker, a.condition, derive_seed(a.common.seed, {0x5113, i}));
      out << json{{"type", "inject_sample"}, {"role", "non_speaking"}, {"embedding", floats_json(sil)}}.dump()
          << '\n';
    }
    out << json{{"type", "set_mode"}, {"mode", "register"}}.dump() << '\n';
    for (std::size_t c = 0; c < world.command_labels().size(); ++c) {
      const auto e = world.sample_utterance(a.speaker, c, a.condition, derive_seed(a.common.seed, {0x2E6, c}),
                                            UtteranceStyle::Voiced);
      out << json{{"type", "inject_sample"}, {"label", world.command_labels()[c]}, {"embedding", floats_json(e)}}
                 .dump()
          << '\n';
    }
    out << json{{"type", "retrain"}}.dump() << '\n';
    out << json{{"type", "set_mode"}, {"mode", "active_learning"}}.dump() << '\n';
  }
  for (const auto& w : stream.windows) {
    out << json{{"type", "window"}, {"seq", w.seq}, {"t_ms", w.t_ms}, {"embedding", floats_json(w.embedding)}}.dump()
        << '\n';
  }
  if (!a.windows_only) out << json{{"type", "bye"}}.dump() << '\n';
  emit(a.common.out, out.str());

  json truth = json::array();
  static const char* kinds[] = {"silence", "keyword", "command", "distractor"};
  for (const auto& t : stream.truth) {
    json item = {{"kind", kinds[static_cast<int>(t.kind)]},
                 {"start_ms", t.start_ms},
                 {"end_ms", t.end_ms},
                 {"first_dominant_window_ms", t.first_dominant_window_ms},
                 {"first_clear_window_ms", t.first_clear_window_ms}};
    if (!t.label.empty()) item["label"] = t.label;
    truth.push_back(std::move(item));
  }
  std::string ann = a.annotations;
  if (ann.empty() && !a.common.out.empty()) ann = a.common.out + ".truth.json";
  if (!ann.empty()) {
    const json doc = {{"seed", a.common.seed},
                      {"speaker", a.speaker},
                      {"condition", a.condition},
                      {"window_ms", settings.kws.window_ms()},
                      {"hop_ms", settings.kws.hop_ms()},
                      {"windows", stream.windows.size()},
                      {"segments", truth}};
    emit(ann, doc.dump(2) + "\n");
  }
  return 0;
}

// ---- eval ----

struct EvalArgs {
  Common common;
  std::size_t repeats = 0;  // 0: protocol default
  std::size_t repetitions = 5;
  std::size_t seeds = 100;
  std::size_t trials = 6;
  std::size_t commands = 30;
  bool no_learning = false;
};

EmbeddingDataset eval_dataset(const Settings& s, const EvalArgs& a) {
  return generate_dataset(SimWorld(s.sim, a.common.seed), a.repetitions);
}

void write_report(const ExperimentReport& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.to_csv();
  } else {
    report.write(out);
    std::cerr << "wrote " << (fs::path(out) / (report.protocol + ".csv")).string() << " and .json\n";
  }
}

int run_eval(const std::string& protocol, const EvalArgs& a) {
  const Settings s = load_settings(a.common.config);
  if (protocol == "shots") {
    ShotsConfig cfg;
    cfg.seed = a.common.seed;
    cfg.fit = s.fit;
    if (a.repeats) cfg.repeats = a.repeats;
    write_report(run_shots_experiment(eval_dataset(s, a), cfg), a.common.out);
  } else if (protocol == "loco") {
    LocoConfig cfg;
    cfg.seed = a.common.seed;
    cfg.fit = s.fit;
    if (a.repeats) cfg.repeats = a.repeats;
    write_report(run_leave_one_condition_out(eval_dataset(s, a), cfg), a.common.out);
  } else if (protocol == "cross") {
    CrossConfig cfg;
    cfg.seed = a.common.seed;
    cfg.fit = s.fit;
    if (a.repeats) cfg.repeats = a.repeats;
    write_report(run_cross_condition(eval_dataset(s, a), cfg), a.common.out);
  } else if (protocol == "eer") {
    auto report = run_eer_analysis(eval_dataset(s, a));
    report.seed = a.common.seed;
    write_report(report, a.common.out);
  } else if (protocol == "incremental") {
    SimParams p = s.sim;
    p.num_commands = a.commands;
    std::ostringstream csv;
    csv.precision(10);
    csv << "with_learning,trial,mean_accuracy,stddev,n,false_activations,missed_keywords\n";
    json doc = {{"protocol", "incremental"}, {"seed", a.common.seed}, {"seeds", a.seeds}, {"runs", json::array()}};
    for (int learn = a.no_learning ? 0 : 1; learn >= 0; --learn) {
      std::vector<std::vector<double>> acc(a.trials);
      std::vector<std::size_t> fa(a.trials), miss(a.trials);
      for (std::size_t k = 0; k < a.seeds; ++k) {
        const std::uint64_t seed = derive_seed(a.common.seed, {k});
        IncrementalConfig cfg;
        cfg.trials = a.trials;
        cfg.with_learning = learn == 1;
        cfg.seed = seed;
        cfg.fit = s.fit;
        cfg.kws = s.kws;
        const auto curve = run_incremental_curve(SimWorld(p, seed), cfg);
        for (std::size_t t = 0; t < a.trials; ++t) {
          acc[t].push_back(curve.trials[t].accuracy);
          fa[t] += curve.trials[t].false_activations;
          miss[t] += curve.trials[t].missed_keywords;
        }
      }
      json run = {{"with_learning", learn == 1}, {"trials", json::array()}};
      for (std::size_t t = 0; t < a.trials; ++t) {
        const Summary sm = summarize(acc[t]);
        csv << (learn ? "true" : "false") << ',' << t + 1 << ',' << sm.mean << ',' << sm.stddev << ',' << sm.n << ','
            << fa[t] << ',' << miss[t] << '\n';
        run["trials"].push_back({{"trial", t + 1}, {"mean", sm.mean}, {"stddev", sm.stddev}, {"values", acc[t]}});
      }
      doc["runs"].push_back(std::move(run));
    }
    if (a.common.out.empty()) {
      std::cout << csv.str();
    } else {
      emit((fs::path(a.common.out) / "incremental.csv").string(), csv.str());
      emit((fs::path(a.common.out) / "incremental.json").string(), doc.dump(1) + "\n");
    }
  }
  return 0;
}

// ---- registry ----

int run_registry_inspect(const std::string& path) {
  const CommandRegistry reg = CommandRegistry::load(path);
  json commands = json::array();
  for (const auto& c : reg.commands()) commands.push_back({{"label", c.label}, {"samples", c.samples.size()}});
  const json doc = {{"path", path},
                    {"version", kRegistrySchemaVersion},
                    {"dim", reg.dim()},
                    {"mode", to_string(reg.mode())},
                    {"total_samples", reg.total_samples()},
                    {"commands", commands},
                    {"keyword",
                     {{"label", reg.keyword().label},
                      {"positives", reg.keyword().positives.size()},
                      {"negatives", reg.keyword().negatives.size()},
                      {"non_speaking", reg.keyword().non_speaking.size()}}},
                    {"kws_config", kws_config_to_json(reg.kws_config())}};
  std::cout << doc.dump(2) << '\n';
  return 0;
}

int run_registry_migrate(const std::string& in, const std::string& out) {
  const json migrated = migrate_registry(read_json_file(in));
  const CommandRegistry reg = CommandRegistry::from_json(migrated);
  if (out.empty()) {
    std::cout << reg.to_json().dump(2) << '\n';
  } else {
    reg.save(out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot silent-speech command engine"};
  app.require_subcommand(1);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run a session over TCP, standard streams or a replay file");
  add_common(serve_cmd, serve.common);
  serve_cmd->add_option("--registry", serve.registry, "Registry file (default: $LIPCMD_REGISTRY)");
  serve_cmd->add_option("--fresh", serve.fresh, "Start an empty registry when the file is missing")
      ->default_val(true);
  serve_cmd->add_option("--replay", serve.replay, "Process a newline-delimited message file and exit")
      ->check(CLI::ExistingFile);
  serve_cmd->add_flag("--stdio", serve.stdio, "Serve over standard input/output");
  serve_cmd->add_option("--port", serve.port, "TCP port on 127.0.0.1 (0 = any)");
  serve_cmd->add_option("--dim", serve.dim, "Embedding dimension of a fresh registry");
  serve_cmd->add_flag("--no-timing", serve.no_timing, "Report retrain durations as 0 (reproducible transcripts)");

  AdapterArgs adapter;
  auto* adapter_cmd = app.add_subcommand("train-adapter", "Train a contrastive adapter on simulator raw features");
  add_common(adapter_cmd, adapter.common);
  adapter_cmd->add_option("--epochs", adapter.train.epochs)->check(CLI::NonNegativeNumber);
  adapter_cmd->add_option("--batch-size", adapter.train.batch_size)->check(CLI::Range(2, 1 << 20));
  adapter_cmd->add_option("--lr", adapter.train.learning_rate)->check(CLI::NonNegativeNumber);
  adapter_cmd->add_option("--tau", adapter.train.tau)->check(CLI::PositiveNumber);
  adapter_cmd->add_option("--speakers", adapter.speakers)->check(CLI::PositiveNumber);
  adapter_cmd->add_option("--reps", adapter.repetitions)->check(CLI::Range(1, 1000));

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate-sim", "Search the noise level for a target one-shot F1 band");
  add_common(cal_cmd, cal.common);
  cal_cmd->add_option("--low", cal.target.low);
  cal_cmd->add_option("--high", cal.target.high);
  cal_cmd->add_option("--seeds", cal.target.seeds)->check(CLI::PositiveNumber);
  cal_cmd->add_option("--sigma", cal.target.sigma_grid, "Explicit ascending sigma grid");

  SimulateArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Write a replay file for a stream script");
  add_common(sim_cmd, sim.common);
  sim_cmd->add_option("--script", sim.script, "Stream script")->required()->check(CLI::ExistingFile);
  sim_cmd->add_option("--annotations", sim.annotations, "Ground-truth JSON (default: <out>.truth.json)");
  sim_cmd->add_option("--speaker", sim.speaker);
  sim_cmd->add_option("--condition", sim.condition);
  sim_cmd->add_option("--keyword-samples", sim.keyword_samples)->check(CLI::PositiveNumber);
  sim_cmd->add_flag("--windows-only", sim.windows_only, "Omit setup messages");

  EvalArgs ev;
  std::string protocol;
  auto* eval_cmd = app.add_subcommand("eval", "Run an evaluation protocol on the simulator");
  add_common(eval_cmd, ev.common);
  eval_cmd->add_option("protocol", protocol, "shots | loco | cross | eer | incremental")
      ->required()
      ->check(CLI::IsMember({"shots", "loco", "cross", "eer", "incremental"}));
  eval_cmd->add_option("--repeats", ev.repeats, "Random draws per cell");
  eval_cmd->add_option("--reps", ev.repetitions, "Dataset repetitions per condition")->check(CLI::Range(1, 1000));
  eval_cmd->add_option("--seeds", ev.seeds, "incremental: independent worlds")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--trials", ev.trials, "incremental: trials per world")->check(CLI::Range(1, 1000));
  eval_cmd->add_option("--commands", ev.commands, "incremental: command count")->check(CLI::Range(2, 1000));
  eval_cmd->add_flag("--no-learning", ev.no_learning, "incremental: frozen model only");

  std::string reg_path;
  std::string reg_out;
  auto* reg_cmd = app.add_subcommand("registry", "Inspect or migrate registry files");
  reg_cmd->require_subcommand(1);
  auto* inspect_cmd = reg_cmd->add_subcommand("inspect", "Summarize a registry file");
  inspect_cmd->add_option("path", reg_path)->required()->check(CLI::ExistingFile);
  auto* migrate_cmd = reg_cmd->add_subcommand("migrate", "Rewrite an older registry as the current schema");
  migrate_cmd->add_option("path", reg_path)->required()->check(CLI::ExistingFile);
  migrate_cmd->add_option("--out", reg_out, "Destination (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*serve_cmd) return run_serve(serve);
    if (*adapter_cmd) return run_train_adapter(adapter);
    if (*cal_cmd) return run_calibrate(cal);
    if (*sim_cmd) return run_simulate(sim);
    if (*eval_cmd) return run_eval(protocol, ev);
    if (*inspect_cmd) return run_registry_inspect(reg_path);
    if (*migrate_cmd) return run_registry_migrate(reg_path, reg_out);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
