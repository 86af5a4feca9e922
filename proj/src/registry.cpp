// SPDX-License-Identifier: Apache-2.0
#include "lipcmd/registry.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lipcmd/base64.hpp"
#include "lipcmd/error.hpp"

namespace lipcmd {

using nlohmann::json;

namespace {

std::string encode_embedding(const UnitEmbedding& e) { return base64::encode_floats(e.values()); }

UnitEmbedding decode_embedding(const json& node, std::size_t dim) {
  if (!node.is_string()) throw Error(Errc::CorruptEmbedding, "embedding payload is not a base64 string");
  auto floats = base64::decode_floats(node.get<std::string>());
  if (!floats) throw Error(Errc::CorruptEmbedding, "embedding payload is not valid base64 float32 data");
  if (floats->size() != dim) {
    throw Error(Errc::CorruptEmbedding, "embedding has " + std::to_string(floats->size()) + " values, expected " +
                                            std::to_string(dim));
  }
  return UnitEmbedding::adopt(std::move(*floats));
}

json encode_list(const std::vector<UnitEmbedding>& list) {
  json out = json::array();
  for (const auto& e : list) out.push_back(encode_embedding(e));
  return out;
}

std::vector<UnitEmbedding> decode_list(const json& node, std::size_t dim) {
  std::vector<UnitEmbedding> out;
  if (node.is_null()) return out;
  if (!node.is_array()) throw Error(Errc::CorruptEmbedding, "expected an array of embeddings");
  for (const auto& item : node) out.push_back(decode_embedding(item, dim));
  return out;
}

}  // namespace

std::string_view to_string(LearningMode mode) noexcept {
  switch (mode) {
    case LearningMode::Initialization: return "initialization";
    case LearningMode::Register: return "register";
    case LearningMode::ActiveLearning: return "active_learning";
    case LearningMode::OnDemand: return "on_demand";
  }
  return "unknown";
}

LearningMode parse_mode(std::string_view text) {
  for (auto mode : {LearningMode::Initialization, LearningMode::Register, LearningMode::ActiveLearning,
                    LearningMode::OnDemand}) {
    if (to_string(mode) == text) return mode;
  }
  throw Error(Errc::InvalidMode, "unknown mode '" + std::string(text) + "'");
}

json kws_config_to_json(const KwsConfig& c) {
  return {{"window_frames", c.window_frames},         {"hop_frames", c.hop_frames},
          {"frame_rate_hz", c.frame_rate_hz},         {"keyword_threshold", c.keyword_threshold},
          {"eos_threshold", c.eos_threshold},         {"eos_delay_factor", c.eos_delay_factor},
          {"max_utterance_s", c.max_utterance_s}};
}

KwsConfig kws_config_from_json(const json& doc, KwsConfig c) {
  if (doc.is_null()) return c;
  if (!doc.is_object()) throw Error(Errc::InvalidConfig, "kws config must be an object");
  try {
    c.window_frames = doc.value("window_frames", c.window_frames);
    c.hop_frames = doc.value("hop_frames", c.hop_frames);
    c.frame_rate_hz = doc.value("frame_rate_hz", c.frame_rate_hz);
    c.keyword_threshold = doc.value("keyword_threshold", c.keyword_threshold);
    c.eos_threshold = doc.value("eos_threshold", c.eos_threshold);
    c.eos_delay_factor = doc.value("eos_delay_factor", c.eos_delay_factor);
    c.max_utterance_s = doc.value("max_utterance_s", c.max_utterance_s);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("kws config: ") + e.what());
  }
  c.validate();
  return c;
}

CommandRegistry::CommandRegistry(std::size_t dim, KwsConfig kws) : dim_(dim), kws_(kws) {
  if (dim_ == 0) throw Error(Errc::InvalidConfig, "registry dimension must be positive");
  kws_.validate();
}

const CommandEntry* CommandRegistry::find(std::string_view label) const {
  const auto it = std::find_if(commands_.begin(), commands_.end(), [&](const auto& c) { return c.label == label; });
  return it == commands_.end() ? nullptr : &*it;
}

std::size_t CommandRegistry::total_samples() const {
  std::size_t n = 0;
  for (const auto& c : commands_) n += c.samples.size();
  return n;
}

void CommandRegistry::check_dim(const UnitEmbedding& e) const {
  if (e.dim() != dim_) {
    throw Error(Errc::DimMismatch,
                "embedding has dim " + std::to_string(e.dim()) + ", registry expects " + std::to_string(dim_));
  }
}

CommandEntry& CommandRegistry::entry_for(const std::string& label) {
  for (auto& c : commands_) {
    if (c.label == label) return c;
  }
  commands_.push_back({label, {}});
  return commands_.back();
}

void CommandRegistry::set_mode(LearningMode mode) {
  if ((mode == LearningMode::ActiveLearning || mode == LearningMode::OnDemand) && commands_.size() < 2) {
    throw Error(Errc::InsufficientData, std::string(to_string(mode)) + " mode needs at least two commands");
  }
  mode_ = mode;
}

KwsReferences CommandRegistry::initialize_keyword(std::span<const UnitEmbedding> keyword_samples,
                                                  std::span<const UnitEmbedding> non_speaking,
                                                  const FitConfig& config) {
  if (mode_ != LearningMode::Initialization) {
    throw Error(Errc::InvalidMode, "keyword initialization requires initialization mode");
  }
  if (keyword_samples.empty() || non_speaking.empty()) {
    throw Error(Errc::InsufficientData, "need at least one keyword and one non-speaking sample");
  }
  for (const auto& e : keyword_samples) check_dim(e);
  for (const auto& e : non_speaking) check_dim(e);
  keyword_.positives.assign(keyword_samples.begin(), keyword_samples.end());
  keyword_.non_speaking.assign(non_speaking.begin(), non_speaking.end());
  keyword_.negatives.clear();
  auto refs = keyword_references(config);
  mode_ = LearningMode::Register;
  return refs;
}

KwsReferences CommandRegistry::keyword_references(const FitConfig& config) const {
  if (!keyword_ready()) throw Error(Errc::UninitializedReferences, "keyword has not been initialized");
  std::vector<UnitEmbedding> negatives = keyword_.non_speaking;
  negatives.insert(negatives.end(), keyword_.negatives.begin(), keyword_.negatives.end());
  return {centroid(keyword_.positives), centroid(keyword_.non_speaking),
          std::make_shared<const LinearClassifier>(fit_binary_kws(keyword_.positives, negatives, config))};
}

void CommandRegistry::add_keyword_negative(UnitEmbedding negative) {
  check_dim(negative);
  keyword_.negatives.push_back(std::move(negative));
}

void CommandRegistry::register_command(const std::string& label, UnitEmbedding embedding, std::int64_t t_ms,
                                       std::optional<std::string> condition) {
  if (mode_ != LearningMode::Register) throw Error(Errc::InvalidMode, "registration requires register mode");
  add_sample(label, std::move(embedding), t_ms, std::move(condition));
}

void CommandRegistry::add_sample(const std::string& label, UnitEmbedding embedding, std::int64_t t_ms,
                                 std::optional<std::string> condition) {
  if (label.empty()) throw Error(Errc::EmptyLabel, "command label must not be empty");
  check_dim(embedding);
  entry_for(label).samples.push_back({std::move(embedding), label, std::move(condition), t_ms});
}

bool CommandRegistry::remove_command(const std::string& label) {
  const auto it = std::find_if(commands_.begin(), commands_.end(), [&](const auto& c) { return c.label == label; });
  if (it == commands_.end()) return false;
  commands_.erase(it);
  return true;
}

void CommandRegistry::add_pending(std::uint64_t utterance_id, UnitEmbedding embedding, Prediction prediction) {
  pending_.push_back({utterance_id, std::move(embedding), std::move(prediction), false});
  while (pending_.size() > kPendingCapacity) pending_.pop_front();
}

bool CommandRegistry::resolve_prediction(std::uint64_t utterance_id, const Feedback& feedback, std::int64_t t_ms) {
  if (mode_ != LearningMode::ActiveLearning && mode_ != LearningMode::OnDemand) {
    throw Error(Errc::InvalidMode, "feedback is only accepted in active_learning or on_demand mode");
  }
  const auto it = std::find_if(pending_.begin(), pending_.end(), [&](const auto& p) {
    return p.utterance_id == utterance_id && !p.resolved;
  });
  if (it == pending_.end()) {
    throw Error(Errc::UnknownUtterance, "no pending utterance with id " + std::to_string(utterance_id));
  }
  const std::string& target = feedback.corrected_label ? *feedback.corrected_label : it->prediction.label;
  if (!find(target)) throw Error(Errc::UnknownLabel, "unknown label: " + target);

  const bool misrecognized = target != it->prediction.label;
  const bool store = mode_ == LearningMode::ActiveLearning || misrecognized;
  if (store) add_sample(target, it->embedding, t_ms);
  it->resolved = true;
  return store;
}

RetrainResult CommandRegistry::retrain(const FitConfig& config) const {
  if (commands_.size() < 2) throw Error(Errc::InsufficientData, "retraining needs at least two commands");
  std::vector<LabeledSample> samples;
  for (const auto& c : commands_) {
    if (c.samples.empty()) throw Error(Errc::InsufficientData, "command '" + c.label + "' has no samples");
    samples.insert(samples.end(), c.samples.begin(), c.samples.end());
  }
  const auto start = std::chrono::steady_clock::now();
  auto clf = std::make_shared<const LinearClassifier>(fit(samples, config));
  return {std::move(clf), std::chrono::steady_clock::now() - start};
}

json CommandRegistry::to_json() const {
  json commands = json::array();
  for (const auto& c : commands_) {
    json samples = json::array();
    for (const auto& s : c.samples) {
      json item = {{"emb_b64", encode_embedding(s.embedding)}, {"t_ms", s.t_ms}};
      if (s.condition) item["condition"] = *s.condition;
      samples.push_back(std::move(item));
    }
    commands.push_back({{"label", c.label}, {"samples", std::move(samples)}});
  }
  return {
      {"version", kRegistrySchemaVersion},
      {"dim", dim_},
      {"mode", std::string(to_string(mode_))},
      {"commands", std::move(commands)},
      {"keyword",
       {{"label", keyword_.label},
        {"positives", encode_list(keyword_.positives)},
        {"negatives", encode_list(keyword_.negatives)},
        {"non_speaking", encode_list(keyword_.non_speaking)}}},
      {"kws_config", kws_config_to_json(kws_)},
  };
}

CommandRegistry CommandRegistry::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(Errc::IoError, "registry document must be a JSON object");
  const auto version = doc.find("version");
  if (version == doc.end() || !version->is_number_integer() || version->get<int>() != kRegistrySchemaVersion) {
    throw Error(Errc::SchemaVersionMismatch,
                "registry schema version " + (version == doc.end() ? std::string("<missing>") : version->dump()) +
                    " is not supported (expected " + std::to_string(kRegistrySchemaVersion) + ")");
  }
  try {
    const auto dim = doc.at("dim").get<std::size_t>();
    CommandRegistry reg(dim, kws_config_from_json(doc.value("kws_config", json())));
    reg.mode_ = parse_mode(doc.at("mode").get<std::string>());
    for (const auto& c : doc.at("commands")) {
      CommandEntry entry{c.at("label").get<std::string>(), {}};
      if (entry.label.empty()) throw Error(Errc::EmptyLabel, "registry contains an empty command label");
      for (const auto& s : c.at("samples")) {
        LabeledSample sample{decode_embedding(s.at("emb_b64"), dim), entry.label, std::nullopt,
                             s.value("t_ms", std::int64_t{0})};
        if (s.contains("condition")) sample.condition = s.at("condition").get<std::string>();
        entry.samples.push_back(std::move(sample));
      }
      if (reg.find(entry.label)) throw Error(Errc::IoError, "duplicate command label '" + entry.label + "'");
      reg.commands_.push_back(std::move(entry));
    }
    if (const auto kw = doc.find("keyword"); kw != doc.end() && !kw->is_null()) {
      reg.keyword_.label = kw->value("label", std::string("keyword"));
      reg.keyword_.positives = decode_list(kw->value("positives", json()), dim);
      reg.keyword_.negatives = decode_list(kw->value("negatives", json()), dim);
      reg.keyword_.non_speaking = decode_list(kw->value("non_speaking", json()), dim);
    }
    return reg;
  } catch (const json::exception& e) {
    throw Error(Errc::IoError, std::string("malformed registry: ") + e.what());
  }
}

void CommandRegistry::save(const std::filesystem::path& path) const {
  const auto tmp = std::filesystem::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp.string());
    out << to_json().dump(1) << '\n';
    if (!out) throw Error(Errc::IoError, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IoError, "cannot replace " + path.string() + ": " + ec.message());
}

CommandRegistry CommandRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read registry " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json doc = json::parse(buffer.str(), nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::IoError, "registry " + path.string() + " is not valid JSON");
  return from_json(doc);
}

json migrate_registry(const json& doc) {
  if (!doc.is_object() || !doc.contains("version")) {
    throw Error(Errc::SchemaVersionMismatch, "document has no version field");
  }
  const int version = doc.at("version").get<int>();
  if (version == kRegistrySchemaVersion) return CommandRegistry::from_json(doc).to_json();
  if (version != 0) throw Error(Errc::SchemaVersionMismatch, "cannot migrate from version " + std::to_string(version));

  // v0: {version:0, dim, commands:[{label, samples:[[floats]]}], keyword:{positives:[[floats]], ...}}
  auto convert = [](const json& list) {
    json out = json::array();
    if (list.is_null()) return out;
    for (const auto& v : list) {
      const auto values = v.get<std::vector<float>>();
      out.push_back(base64::encode_floats(normalize(std::span<const float>(values)).values()));
    }
    return out;
  };
  json out = {{"version", kRegistrySchemaVersion},
              {"dim", doc.at("dim")},
              {"mode", doc.value("mode", std::string("register"))},
              {"commands", json::array()},
              {"kws_config", doc.value("kws_config", kws_config_to_json(KwsConfig{}))}};
  for (const auto& c : doc.value("commands", json::array())) {
    json samples = json::array();
    for (const auto& emb : convert(c.at("samples"))) samples.push_back({{"emb_b64", emb}, {"t_ms", 0}});
    out["commands"].push_back({{"label", c.at("label")}, {"samples", std::move(samples)}});
  }
  const json kw = doc.value("keyword", json::object());
  out["keyword"] = {{"label", kw.value("label", std::string("keyword"))},
                    {"positives", convert(kw.value("positives", json()))},
                    {"negatives", convert(kw.value("negatives", json()))},
                    {"non_speaking", convert(kw.value("non_speaking", json()))}};
  // round-trip through the loader so the result is guaranteed valid
  return CommandRegistry::from_json(out).to_json();
}

}  // namespace lipcmd
