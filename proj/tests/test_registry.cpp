// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "helpers.hpp"
#include "lipcmd/base64.hpp"
#include "lipcmd/error.hpp"
#include "lipcmd/registry.hpp"
#include "registry_gen.hpp"

using namespace lipcmd;
using nlohmann::json;

namespace {

constexpr std::size_t kDim = 6;

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected lipcmd::Error");
  return Errc::Protocol;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lipcmd_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// keyword = e0, silence = e1, commands on e2.. e5
CommandRegistry initialized() {
  CommandRegistry reg(kDim);
  const std::vector<UnitEmbedding> kw = {test::basis(kDim, 0)};
  const std::vector<UnitEmbedding> ns = {test::basis(kDim, 1)};
  reg.initialize_keyword(kw, ns);
  return reg;
}

CommandRegistry with_commands() {
  auto reg = initialized();
  reg.register_command("lights on", test::basis(kDim, 2));
  reg.register_command("lights off", test::basis(kDim, 3));
  reg.register_command("music", test::basis(kDim, 4));
  return reg;
}

Prediction predicted(const std::string& label) { return {label, 0.9, {{label, 0.9}}}; }

}  // namespace

TEST_CASE("mode names parse and print") {
  for (auto m : {LearningMode::Initialization, LearningMode::Register, LearningMode::ActiveLearning,
                 LearningMode::OnDemand}) {
    CHECK(parse_mode(to_string(m)) == m);
  }
  CHECK(code_of([] { parse_mode("sleeping"); }) == Errc::InvalidMode);
}

TEST_CASE("keyword initialization advances to register mode") {
  CommandRegistry reg(kDim);
  CHECK(reg.mode() == LearningMode::Initialization);
  CHECK_FALSE(reg.keyword_ready());
  CHECK(code_of([&] { reg.keyword_references(); }) == Errc::UninitializedReferences);
  const std::vector<UnitEmbedding> none;
  const std::vector<UnitEmbedding> kw = {test::basis(kDim, 0)};
  CHECK(code_of([&] { reg.initialize_keyword(none, kw); }) == Errc::InsufficientData);
  const std::vector<UnitEmbedding> wrong = {test::basis(kDim + 1, 0)};
  CHECK(code_of([&] { reg.initialize_keyword(wrong, kw); }) == Errc::DimMismatch);

  const std::vector<UnitEmbedding> ns = {test::basis(kDim, 1)};
  const auto refs = reg.initialize_keyword(kw, ns);
  CHECK(reg.mode() == LearningMode::Register);
  CHECK(reg.keyword_ready());
  CHECK(refs.keyword == test::basis(kDim, 0));
  CHECK(refs.non_speaking == test::basis(kDim, 1));
  REQUIRE(refs.reexam);
  CHECK(refs.reexam->probability_of(test::basis(kDim, 0), kKeywordClass) > 0.5);
  CHECK(code_of([&] { reg.initialize_keyword(kw, ns); }) == Errc::InvalidMode);
}

TEST_CASE("registration rules") {
  CommandRegistry fresh(kDim);
  CHECK(code_of([&] { fresh.register_command("x", test::basis(kDim, 2)); }) == Errc::InvalidMode);
  auto reg = initialized();
  CHECK(code_of([&] { reg.register_command("", test::basis(kDim, 2)); }) == Errc::EmptyLabel);
  CHECK(code_of([&] { reg.register_command("x", test::basis(kDim - 1, 2)); }) == Errc::DimMismatch);
  reg.register_command("x", test::basis(kDim, 2));
  reg.register_command("x", test::basis(kDim, 3));
  REQUIRE(reg.find("x"));
  CHECK(reg.find("x")->samples.size() == 2);
  CHECK(reg.total_samples() == 2);
  CHECK(reg.find("y") == nullptr);
  CHECK(reg.remove_command("x"));
  CHECK_FALSE(reg.remove_command("x"));
}

TEST_CASE("learning modes need two commands") {
  auto reg = initialized();
  reg.register_command("only", test::basis(kDim, 2));
  CHECK(code_of([&] { reg.set_mode(LearningMode::ActiveLearning); }) == Errc::InsufficientData);
  CHECK(code_of([&] { reg.set_mode(LearningMode::OnDemand); }) == Errc::InsufficientData);
  reg.register_command("other", test::basis(kDim, 3));
  reg.set_mode(LearningMode::OnDemand);
  CHECK(reg.mode() == LearningMode::OnDemand);
}

TEST_CASE("active learning stores confirmed and corrected samples") {
  auto reg = with_commands();
  reg.set_mode(LearningMode::ActiveLearning);
  const auto u = test::blend(kDim, {{2, 1.0}, {5, 0.3}});
  reg.add_pending(7, u, predicted("lights on"));
  CHECK(reg.resolve_prediction(7, Feedback::confirm(), 100));
  CHECK(reg.find("lights on")->samples.size() == 2);
  CHECK(reg.find("lights on")->samples.back().embedding == u);
  CHECK(reg.find("lights on")->samples.back().t_ms == 100);
  // resolved entries cannot be resolved again
  CHECK(code_of([&] { reg.resolve_prediction(7, Feedback::confirm()); }) == Errc::UnknownUtterance);

  reg.add_pending(8, u, predicted("lights on"));
  CHECK(reg.resolve_prediction(8, Feedback::correct("music")));
  CHECK(reg.find("music")->samples.size() == 2);
}

TEST_CASE("on-demand stores only corrections that change the label") {
  auto reg = with_commands();
  reg.set_mode(LearningMode::OnDemand);
  const auto before = reg;
  reg.add_pending(1, test::basis(kDim, 2), predicted("lights on"));
  CHECK_FALSE(reg.resolve_prediction(1, Feedback::confirm()));
  CHECK(reg == before);
  reg.add_pending(2, test::basis(kDim, 2), predicted("lights on"));
  CHECK_FALSE(reg.resolve_prediction(2, Feedback::correct("lights on")));
  CHECK(reg == before);
  reg.add_pending(3, test::basis(kDim, 2), predicted("lights on"));
  CHECK(reg.resolve_prediction(3, Feedback::correct("lights off")));
  CHECK(reg.find("lights off")->samples.size() == 2);
}

TEST_CASE("feedback errors") {
  auto reg = with_commands();
  reg.add_pending(1, test::basis(kDim, 2), predicted("lights on"));
  CHECK(code_of([&] { reg.resolve_prediction(1, Feedback::confirm()); }) == Errc::InvalidMode);
  reg.set_mode(LearningMode::ActiveLearning);
  CHECK(code_of([&] { reg.resolve_prediction(99, Feedback::confirm()); }) == Errc::UnknownUtterance);
  CHECK(code_of([&] { reg.resolve_prediction(1, Feedback::correct("nope")); }) == Errc::UnknownLabel);
}

TEST_CASE("pending ring drops the oldest entries") {
  auto reg = with_commands();
  reg.set_mode(LearningMode::ActiveLearning);
  for (std::uint64_t id = 1; id <= CommandRegistry::kPendingCapacity + 3; ++id) {
    reg.add_pending(id, test::basis(kDim, 2), predicted("music"));
  }
  CHECK(reg.pending().size() == CommandRegistry::kPendingCapacity);
  CHECK(reg.pending().front().utterance_id == 4);
  CHECK(code_of([&] { reg.resolve_prediction(3, Feedback::confirm()); }) == Errc::UnknownUtterance);
  CHECK(reg.resolve_prediction(4, Feedback::confirm()));
}

TEST_CASE("retrain fits every stored sample") {
  auto reg = initialized();
  CHECK(code_of([&] { reg.retrain(); }) == Errc::InsufficientData);
  reg.register_command("a", test::basis(kDim, 2));
  CHECK(code_of([&] { reg.retrain(); }) == Errc::InsufficientData);
  reg.register_command("b", test::basis(kDim, 3));
  reg.register_command("b", test::basis(kDim, 4));
  const auto r = reg.retrain();
  REQUIRE(r.classifier);
  CHECK(r.classifier->trained_on() == 3);
  CHECK(r.classifier->predict(test::basis(kDim, 2)).label == "a");
  CHECK(r.classifier->predict(test::basis(kDim, 4)).label == "b");
  CHECK(r.duration.count() >= 0.0);
}

TEST_CASE("keyword references include reported negatives") {
  auto reg = initialized();
  const auto near = test::blend(kDim, {{0, 1.0}, {5, 0.8}});
  const double before = reg.keyword_references().reexam->probability_of(near, kKeywordClass);
  for (int i = 0; i < 3; ++i) reg.add_keyword_negative(near);
  const double after = reg.keyword_references().reexam->probability_of(near, kKeywordClass);
  CHECK(after < before);
  CHECK(reg.keyword().negatives.size() == 3);
  CHECK(code_of([&] { reg.add_keyword_negative(test::basis(kDim + 2, 0)); }) == Errc::DimMismatch);
}

TEST_CASE("json and file round trips are exact") {
  std::mt19937_64 rng(404);
  const auto dir = scratch_dir("roundtrip");
  for (int trial = 0; trial < 200; ++trial) {
    const auto reg = test::random_registry(rng);
    const auto doc = reg.to_json();
    CHECK(doc.at("version") == kRegistrySchemaVersion);
    const auto back = CommandRegistry::from_json(json::parse(doc.dump()));
    CHECK(back == reg);
    CHECK(back.to_json().dump() == doc.dump());
    const auto file = dir / "reg.json";
    reg.save(file);
    CHECK(CommandRegistry::load(file) == reg);
    CHECK_FALSE(std::filesystem::exists(dir / "reg.json.tmp"));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("schema version and payload validation") {
  const auto doc = with_commands().to_json();
  auto bad = doc;
  bad["version"] = 2;
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::SchemaVersionMismatch);
  bad.erase("version");
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::SchemaVersionMismatch);

  bad = doc;
  bad["commands"][0]["samples"][0]["emb_b64"] = "not base64!";
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::CorruptEmbedding);
  bad["commands"][0]["samples"][0]["emb_b64"] = base64::encode_floats(std::vector<float>{1.0f, 0.0f});
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::CorruptEmbedding);
  bad["commands"][0]["samples"][0]["emb_b64"] = base64::encode_floats(std::vector<float>(kDim, 0.9f));
  CHECK_THROWS_AS(CommandRegistry::from_json(bad), Error);

  bad = doc;
  bad["mode"] = "asleep";
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::InvalidMode);
  bad = doc;
  bad.erase("commands");
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::IoError);
  bad = doc;
  bad["commands"][1]["label"] = bad["commands"][0]["label"];
  CHECK(code_of([&] { CommandRegistry::from_json(bad); }) == Errc::IoError);
}

TEST_CASE("load errors") {
  const auto dir = scratch_dir("load");
  CHECK(code_of([&] { CommandRegistry::load(dir / "missing.json"); }) == Errc::IoError);
  std::ofstream(dir / "junk.json") << "{ not json";
  CHECK(code_of([&] { CommandRegistry::load(dir / "junk.json"); }) == Errc::IoError);
  CHECK(code_of([&] { with_commands().save(dir / "no" / "such" / "dir.json"); }) == Errc::IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("save replaces an existing file atomically") {
  const auto dir = scratch_dir("atomic");
  const auto file = dir / "reg.json";
  auto reg = with_commands();
  reg.save(file);
  reg.register_command("extra", test::basis(kDim, 5));
  reg.save(file);
  CHECK(CommandRegistry::load(file) == reg);
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++entries;
  CHECK(entries == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("version 0 documents migrate") {
  json v0 = {{"version", 0},
             {"dim", 3},
             {"commands", {{{"label", "up"}, {"samples", {{3.0, 0.0, 4.0}, {0.0, 2.0, 0.0}}}}}},
             {"keyword", {{"positives", {{1.0, 1.0, 0.0}}}, {"non_speaking", {{0.0, 0.0, 5.0}}}}}};
  const auto migrated = migrate_registry(v0);
  CHECK(migrated.at("version") == kRegistrySchemaVersion);
  const auto reg = CommandRegistry::from_json(migrated);
  CHECK(reg.mode() == LearningMode::Register);
  REQUIRE(reg.find("up"));
  REQUIRE(reg.find("up")->samples.size() == 2);
  const auto& e = reg.find("up")->samples[0].embedding;
  CHECK(e[0] == doctest::Approx(0.6));
  CHECK(e[2] == doctest::Approx(0.8));
  CHECK(reg.keyword_ready());
  CHECK(reg.kws_config() == KwsConfig{});

  // current documents pass through unchanged
  const auto current = with_commands().to_json();
  CHECK(migrate_registry(current) == current);

  json future = current;
  future["version"] = 7;
  CHECK(code_of([&] { migrate_registry(future); }) == Errc::SchemaVersionMismatch);
  v0["commands"][0]["samples"][0] = {0.0, 0.0, 0.0};
  CHECK(code_of([&] { migrate_registry(v0); }) == Errc::ZeroVector);
}

TEST_CASE("kws config json") {
  KwsConfig c;
  c.keyword_threshold = 0.55;
  c.max_utterance_s = 3.5;
  CHECK(kws_config_from_json(kws_config_to_json(c)) == c);
  CHECK(kws_config_from_json(json::object()) == KwsConfig{});
  CHECK(code_of([] { kws_config_from_json(json{{"hop_frames", 0}}); }) == Errc::InvalidConfig);
}
