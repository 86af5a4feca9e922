// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/session.hpp"

#include <cmath>

#include "lipcmd/error.hpp"

namespace lipcmd {

using nlohmann::json;

namespace {

json error_message(std::string_view code, const std::string& detail) {
  return {{"type", "error"}, {"code", code}, {"detail", detail}};
}

json event_message(std::string_view kind, std::int64_t t_ms) {
  return {{"type", "event"}, {"kind", kind}, {"t_ms", t_ms}};
}

const json& field(const json& msg, const char* name) {
  const auto it = msg.find(name);
  if (it == msg.end()) throw Error(Errc::Protocol, std::string("missing field '") + name + "'");
  return *it;
}

std::string string_field(const json& msg, const char* name) {
  const json& v = field(msg, name);
  if (!v.is_string()) throw Error(Errc::Protocol, std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

std::int64_t int_field(const json& msg, const char* name) {
  const json& v = field(msg, name);
  if (!v.is_number_integer()) throw Error(Errc::Protocol, std::string("field '") + name + "' must be an integer");
  return v.get<std::int64_t>();
}

json ranking_json(const Prediction& p) {
  json scores = json::array();
  for (const auto& r : p.ranking) scores.push_back({{"label", r.label}, {"probability", r.probability}});
  return scores;
}

}  // namespace

Session::Session(CommandRegistry registry, SessionOptions options)
    : registry_(std::move(registry)), options_(std::move(options)), engine_(registry_.kws_config()) {
  if (registry_.keyword_ready()) engine_.set_references(registry_.keyword_references(options_.fit));
  bool trainable = registry_.commands().size() >= 2;
  for (const auto& c : registry_.commands()) trainable = trainable && !c.samples.empty();
  if (trainable) {
    model_ = registry_.retrain(options_.fit).classifier;
    model_gen_ = 1;
  }
}

std::vector<std::string> Session::handle_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.remove_suffix(1);
  std::vector<std::string> lines;
  if (line.empty()) return lines;
  Out out;
  json msg = json::parse(line, nullptr, false);
  if (msg.is_discarded()) {
    out.push_back(error_message("protocol", "malformed JSON"));
  } else {
    out = handle(msg);
  }
  lines.reserve(out.size());
  for (const auto& m : out) lines.push_back(m.dump());
  return lines;
}

std::vector<json> Session::handle(const json& msg) {
  Out out;
  try {
    if (closed_) throw Error(Errc::Protocol, "session is closed");
    if (!msg.is_object()) throw Error(Errc::Protocol, "message must be a JSON object");
    const std::string type = string_field(msg, "type");
    if (type == "hello") {
      on_hello(msg, out);
    } else if (type == "window") {
      on_window(msg, out);
    } else if (type == "set_mode") {
      on_set_mode(msg, out);
    } else if (type == "register") {
      on_register(msg, out);
    } else if (type == "inject_sample") {
      on_inject(msg, out);
    } else if (type == "feedback") {
      on_feedback(msg, out);
    } else if (type == "report_misactivation") {
      on_misactivation(msg, out);
    } else if (type == "retrain") {
      on_retrain(out);
    } else if (type == "save") {
      on_save(out);
    } else if (type == "bye") {
      on_bye(out);
    } else {
      throw Error(Errc::Protocol, "unknown message type '" + type + "'");
    }
  } catch (const Error& e) {
    out.push_back(error_message(to_string(e.code()), e.what()));
  } catch (const json::exception& e) {
    out.push_back(error_message("protocol", e.what()));
  }
  return out;
}

void Session::on_hello(const json&, Out& out) {
  json commands = json::array();
  for (const auto& c : registry_.commands()) commands.push_back({{"label", c.label}, {"samples", c.samples.size()}});
  out.push_back({{"type", "hello"},
                 {"protocol", kProtocolVersion},
                 {"dim", registry_.dim()},
                 {"mode", to_string(registry_.mode())},
                 {"keyword_ready", registry_.keyword_ready()},
                 {"commands", std::move(commands)},
                 {"model_gen", model_gen_}});
}

UnitEmbedding Session::embedding_from(const json& msg) const {
  const json& arr = field(msg, "embedding");
  if (!arr.is_array()) throw Error(Errc::Protocol, "embedding must be an array of numbers");
  if (arr.size() != registry_.dim()) {
    throw Error(Errc::DimMismatch, "embedding has " + std::to_string(arr.size()) + " entries, session dim is " +
                                       std::to_string(registry_.dim()));
  }
  std::vector<float> values;
  values.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw Error(Errc::Protocol, "embedding must be an array of numbers");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw Error(Errc::CorruptEmbedding, "embedding entry is not finite");
    values.push_back(static_cast<float>(d));
  }
  // already unit length: keep the exact bits
  if (std::abs(l2_norm(values) - 1.0) <= kUnitNormTolerance) return UnitEmbedding::adopt(std::move(values));
  return normalize(std::span<const float>(values));
}

void Session::on_window(const json& msg, Out& out) {
  const std::int64_t t_ms = int_field(msg, "t_ms");
  if (last_window_ms_ && t_ms <= *last_window_ms_) {
    throw Error(Errc::Protocol, "window t_ms must increase (got " + std::to_string(t_ms) + " after " +
                                    std::to_string(*last_window_ms_) + ")");
  }
  const UnitEmbedding window = embedding_from(msg);
  if (!engine_.ready()) throw Error(Errc::UninitializedReferences, "keyword is not initialized");
  last_window_ms_ = t_ms;
  for (const auto& ev : engine_.process_window(window, t_ms)) {
    if (ev.kind == EventKind::UtteranceReady) {
      json m = event_message(to_string(ev.kind), ev.t_ms);
      m["utterance_id"] = ev.utterance_id;
      m["windows"] = ev.captured_windows;
      out.push_back(std::move(m));
      on_utterance(ev, out);
      continue;
    }
    json m = event_message(to_string(ev.kind), ev.t_ms);
    m["utterance_id"] = ev.utterance_id;
    if (ev.similarity) m["similarity"] = *ev.similarity;
    out.push_back(std::move(m));
  }
}

void Session::on_utterance(const SessionEvent& ev, Out& out) {
  if (pending_registration_) {
    registry_.register_command(*pending_registration_, *ev.utterance, ev.t_ms);
    json m = event_message("registered", ev.t_ms);
    m["utterance_id"] = ev.utterance_id;
    m["label"] = *pending_registration_;
    m["samples"] = registry_.find(*pending_registration_)->samples.size();
    out.push_back(std::move(m));
    pending_registration_.reset();
    return;
  }
  if (!model_) {
    out.push_back(error_message(to_string(Errc::InsufficientData),
                                "utterance " + std::to_string(ev.utterance_id) + " dropped: no trained model"));
    return;
  }
  const auto model = model_;
  const Prediction pred = model->predict(*ev.utterance);
  const LearningMode mode = registry_.mode();
  if (mode == LearningMode::ActiveLearning || mode == LearningMode::OnDemand) {
    registry_.add_pending(ev.utterance_id, *ev.utterance, pred);
  }
  out.push_back({{"type", "prediction"},
                 {"utterance_id", ev.utterance_id},
                 {"t_ms", ev.t_ms},
                 {"label", pred.label},
                 {"score", pred.score},
                 {"scores", ranking_json(pred)},
                 {"model_gen", model_gen_}});
}

void Session::initialize_keyword_if_staged() {
  if (registry_.mode() != LearningMode::Initialization) return;
  engine_.set_references(registry_.initialize_keyword(staged_keyword_, staged_non_speaking_, options_.fit));
  staged_keyword_.clear();
  staged_non_speaking_.clear();
}

void Session::on_set_mode(const json& msg, Out& out) {
  const LearningMode target = parse_mode(string_field(msg, "mode"));
  if (registry_.mode() == LearningMode::Initialization && target != LearningMode::Initialization) {
    if (staged_keyword_.empty() || staged_non_speaking_.empty()) {
      throw Error(Errc::UninitializedReferences,
                  "inject keyword and non_speaking samples before leaving initialization");
    }
    initialize_keyword_if_staged();
  }
  if (target == LearningMode::Initialization && registry_.mode() != LearningMode::Initialization) {
    throw Error(Errc::InvalidMode, "cannot return to initialization");
  }
  if (target != registry_.mode()) registry_.set_mode(target);
  if (target != LearningMode::Register) pending_registration_.reset();
  json m = event_message("mode_changed", last_window_ms_.value_or(0));
  m["mode"] = to_string(registry_.mode());
  out.push_back(std::move(m));
}

void Session::on_register(const json& msg, Out& out) {
  std::string label = string_field(msg, "label");
  if (label.empty()) throw Error(Errc::EmptyLabel, "label must not be empty");
  if (registry_.mode() != LearningMode::Register) throw Error(Errc::InvalidMode, "registration requires register mode");
  pending_registration_ = label;
  json m = event_message("awaiting_utterance", last_window_ms_.value_or(0));
  m["label"] = std::move(label);
  out.push_back(std::move(m));
}

void Session::on_inject(const json& msg, Out& out) {
  std::string role = "command";
  if (const auto it = msg.find("role"); it != msg.end()) {
    if (!it->is_string()) throw Error(Errc::Protocol, "field 'role' must be a string");
    role = it->get<std::string>();
  }
  UnitEmbedding e = embedding_from(msg);
  const std::int64_t t_ms = last_window_ms_.value_or(0);
  json m = event_message("sample_added", t_ms);
  m["role"] = role;
  if (role == "keyword" || role == "non_speaking") {
    if (registry_.mode() != LearningMode::Initialization) {
      throw Error(Errc::InvalidMode, "keyword samples are only accepted during initialization");
    }
    auto& staged = role == "keyword" ? staged_keyword_ : staged_non_speaking_;
    staged.push_back(std::move(e));
    m["samples"] = staged.size();
  } else if (role == "command") {
    const std::string label = string_field(msg, "label");
    if (label.empty()) throw Error(Errc::EmptyLabel, "label must not be empty");
    registry_.add_sample(label, std::move(e), t_ms);
    m["label"] = label;
    m["samples"] = registry_.find(label)->samples.size();
  } else {
    throw Error(Errc::Protocol, "unknown role '" + role + "'");
  }
  out.push_back(std::move(m));
}

void Session::on_feedback(const json& msg, Out& out) {
  const auto id = static_cast<std::uint64_t>(int_field(msg, "utterance_id"));
  const std::string outcome = string_field(msg, "outcome");
  Feedback fb;
  if (outcome == "confirm") {
    fb = Feedback::confirm();
  } else if (outcome == "correct") {
    fb = Feedback::correct(string_field(msg, "label"));
  } else {
    throw Error(Errc::Protocol, "outcome must be 'confirm' or 'correct'");
  }
  const bool stored = registry_.resolve_prediction(id, fb, last_window_ms_.value_or(0));
  json m = event_message("feedback_applied", last_window_ms_.value_or(0));
  m["utterance_id"] = id;
  m["sample_added"] = stored;
  out.push_back(std::move(m));
}

void Session::on_misactivation(const json& msg, Out& out) {
  const auto id = static_cast<std::uint64_t>(int_field(msg, "utterance_id"));
  std::vector<UnitEmbedding> negatives;
  engine_.report_misactivation(id, negatives);
  for (auto& n : negatives) registry_.add_keyword_negative(std::move(n));
  engine_.set_references(registry_.keyword_references(options_.fit));
  json m = event_message("misactivation_reported", last_window_ms_.value_or(0));
  m["utterance_id"] = id;
  m["negatives"] = registry_.keyword().negatives.size();
  out.push_back(std::move(m));
}

void Session::on_retrain(Out& out) {
  RetrainResult result = registry_.retrain(options_.fit);
  model_ = std::move(result.classifier);
  ++model_gen_;
  out.push_back({{"type", "retrained"},
                 {"duration_ms", options_.report_durations ? result.duration.count() : 0.0},
                 {"num_samples", registry_.total_samples()},
                 {"model_gen", model_gen_}});
}

void Session::on_save(Out& out) {
  if (!options_.registry_path) throw Error(Errc::IoError, "no registry path configured");
  registry_.save(*options_.registry_path);
  json m = event_message("saved", last_window_ms_.value_or(0));
  m["path"] = options_.registry_path->string();
  out.push_back(std::move(m));
}

void Session::on_bye(Out& out) {
  close();
  out.push_back(event_message("bye", last_window_ms_.value_or(0)));
}

void Session::close() {
  if (closed_) return;
  closed_ = true;
  if (options_.autosave && options_.registry_path) registry_.save(*options_.registry_path);
}

}  // namespace lipcmd
