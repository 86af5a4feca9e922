// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "helpers.hpp"
#include "lipcmd/error.hpp"
#include "lipcmd/session.hpp"

using namespace lipcmd;
using nlohmann::json;

namespace {

constexpr std::size_t kDim = 6;

json emb(const UnitEmbedding& e) {
  json a = json::array();
  for (float v : e.values()) a.push_back(v);
  return a;
}

json window(std::int64_t t, const UnitEmbedding& e) { return {{"type", "window"}, {"t_ms", t}, {"embedding", emb(e)}}; }

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lipcmd_session_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// keyword = e0, silence = e1, commands "up" = e2, "down" = e3
struct Driver {
  Session session;
  std::int64_t t = 1000;

  explicit Driver(SessionOptions opts = {}) : session(CommandRegistry(kDim), std::move(opts)) {}

  std::vector<json> send(const json& m) { return session.handle(m); }

  json last(const json& m) {
    auto out = send(m);
    REQUIRE_FALSE(out.empty());
    return out.back();
  }

  // feeds windows for a pattern (K keyword, N silence, digit = basis index)
  std::vector<json> speak(const std::string& pattern) {
    std::vector<json> all;
    for (char c : pattern) {
      const std::size_t i = c == 'K' ? 0 : c == 'N' ? 1 : static_cast<std::size_t>(c - '0');
      for (auto& m : send(window(t, test::basis(kDim, i)))) all.push_back(std::move(m));
      t += 500;
    }
    return all;
  }

  void setup() {
    send({{"type", "inject_sample"}, {"role", "keyword"}, {"embedding", emb(test::basis(kDim, 0))}});
    send({{"type", "inject_sample"}, {"role", "non_speaking"}, {"embedding", emb(test::basis(kDim, 1))}});
    REQUIRE(last({{"type", "set_mode"}, {"mode", "register"}}).at("mode") == "register");
    for (auto [label, i] : {std::pair<const char*, std::size_t>{"up", 2}, {"down", 3}}) {
      REQUIRE(last({{"type", "register"}, {"label", label}}).at("kind") == "awaiting_utterance");
      const auto out = speak(std::string("K") + char('0' + i) + char('0' + i) + "NNN");
      REQUIRE(out.back().at("kind") == "registered");
      CHECK(out.back().at("label") == label);
    }
    REQUIRE(last({{"type", "retrain"}}).at("type") == "retrained");
  }
};

std::string error_code(const std::vector<json>& out) {
  REQUIRE(out.size() == 1);
  REQUIRE(out[0].at("type") == "error");
  return out[0].at("code").get<std::string>();
}

}  // namespace

TEST_CASE("golden replay reproduces the transcript byte for byte") {
  const std::string data = LIPCMD_TEST_DATA;
  std::ifstream in(data + "/golden_replay.ndjson");
  REQUIRE(in);
  SessionOptions opts;
  opts.report_durations = false;
  Session session(CommandRegistry(128), opts);
  std::ostringstream out;
  run_stream(session, in, out);
  CHECK(session.closed());
  CHECK(out.str() == read_file(data + "/golden_transcript.ndjson"));
}

TEST_CASE("golden transcript events are causally ordered per utterance") {
  std::ifstream in(std::string(LIPCMD_TEST_DATA) + "/golden_transcript.ndjson");
  std::map<std::uint64_t, std::vector<std::string>> seen;
  std::string line;
  std::int64_t last_t = 0;
  std::uint64_t last_gen = 0;
  while (std::getline(in, line)) {
    const auto m = json::parse(line);
    if (m.contains("t_ms")) {
      CHECK(m.at("t_ms").get<std::int64_t>() >= last_t);
      last_t = m.at("t_ms").get<std::int64_t>();
    }
    if (m.contains("model_gen")) {
      CHECK(m.at("model_gen").get<std::uint64_t>() >= last_gen);
      last_gen = m.at("model_gen").get<std::uint64_t>();
    }
    if (!m.contains("utterance_id")) continue;
    const std::string tag = m.at("type") == "prediction" ? "prediction" : m.at("kind").get<std::string>();
    seen[m.at("utterance_id").get<std::uint64_t>()].push_back(tag);
  }
  REQUIRE(seen.size() == 3);
  for (const auto& [id, tags] : seen) {
    REQUIRE(tags.size() == 4);
    CHECK(tags[0] == "keyword_detected");
    CHECK((tags[1] == "end_of_speech" || tags[1] == "max_length_cutoff"));
    CHECK(tags[2] == "utterance_ready");
    CHECK(tags[3] == "prediction");
  }
}

TEST_CASE("protocol errors keep the session usable") {
  Driver d;
  CHECK(d.session.handle_line("{not json").front().find("\"code\":\"protocol\"") != std::string::npos);
  CHECK(d.session.handle_line("   ").empty());
  CHECK(error_code(d.send(json::array())) == "protocol");
  CHECK(error_code(d.send({{"type", "dance"}})) == "protocol");
  CHECK(error_code(d.send({{"kind", "window"}})) == "protocol");
  CHECK(error_code(d.send({{"type", "window"}, {"t_ms", "soon"}, {"embedding", emb(test::basis(kDim, 0))}})) ==
        "protocol");
  CHECK(error_code(d.send(window(1000, test::basis(kDim, 0)))) == "uninitialized_references");
  CHECK(error_code(d.send({{"type", "window"}, {"t_ms", 1}, {"embedding", {1.0, 0.0}}})) == "dim_mismatch");
  CHECK(error_code(d.send({{"type", "window"}, {"t_ms", 1}, {"embedding", {0, 0, 0, 0, 0, 0}}})) == "zero_vector");
  CHECK(error_code(d.send({{"type", "set_mode"}, {"mode", "register"}})) == "uninitialized_references");
  CHECK(error_code(d.send({{"type", "set_mode"}, {"mode", "sleep"}})) == "invalid_mode");
  CHECK(error_code(d.send({{"type", "register"}, {"label", "x"}})) == "invalid_mode");
  CHECK(error_code(d.send({{"type", "save"}})) == "io_error");
  CHECK(error_code(d.send({{"type", "retrain"}})) == "insufficient_data");
  CHECK(error_code(d.send({{"type", "inject_sample"}, {"role", "ghost"}, {"embedding", emb(test::basis(kDim, 0))}})) ==
        "protocol");
  CHECK(d.last({{"type", "hello"}}).at("mode") == "initialization");
}

TEST_CASE("window timestamps must increase") {
  Driver d;
  d.setup();
  d.send(window(100000, test::basis(kDim, 1)));
  CHECK(error_code(d.send(window(100000, test::basis(kDim, 1)))) == "protocol");
  CHECK(error_code(d.send(window(99999, test::basis(kDim, 1)))) == "protocol");
  CHECK(d.send(window(100500, test::basis(kDim, 1))).empty());
}

TEST_CASE("registration, prediction, feedback and retrain") {
  Driver d;
  d.setup();
  CHECK(d.session.model_generation() == 1);
  CHECK(error_code(d.send({{"type", "set_mode"}, {"mode", "initialization"}})) == "invalid_mode");
  CHECK(d.last({{"type", "set_mode"}, {"mode", "active_learning"}}).at("mode") == "active_learning");
  CHECK(error_code(d.send({{"type", "inject_sample"}, {"role", "keyword"}, {"embedding", emb(test::basis(kDim, 0))}})) ==
        "invalid_mode");

  auto out = d.speak("K22NNN");
  REQUIRE(out.size() == 4);
  const auto& pred = out.back();
  CHECK(pred.at("type") == "prediction");
  CHECK(pred.at("label") == "up");
  CHECK(pred.at("model_gen") == 1);
  CHECK(pred.at("scores").size() == 2);
  const auto id = pred.at("utterance_id").get<std::uint64_t>();

  const auto fb = d.last({{"type", "feedback"}, {"utterance_id", id}, {"outcome", "confirm"}});
  CHECK(fb.at("kind") == "feedback_applied");
  CHECK(fb.at("sample_added") == true);
  CHECK(d.session.registry().find("up")->samples.size() == 2);
  CHECK(error_code(d.send({{"type", "feedback"}, {"utterance_id", id}, {"outcome", "confirm"}})) ==
        "unknown_utterance");
  CHECK(error_code(d.send({{"type", "feedback"}, {"utterance_id", id}, {"outcome", "maybe"}})) == "protocol");

  const auto rt = d.last({{"type", "retrain"}});
  CHECK(rt.at("model_gen") == 2);
  CHECK(rt.at("num_samples") == 3);
  CHECK(rt.at("duration_ms").get<double>() >= 0.0);
  out = d.speak("K33NNN");
  CHECK(out.back().at("label") == "down");
  CHECK(out.back().at("model_gen") == 2);

  // on-demand: a correction to a new label is stored, a confirmation is not
  d.send({{"type", "set_mode"}, {"mode", "on_demand"}});
  out = d.speak("K33NNN");
  const auto id2 = out.back().at("utterance_id").get<std::uint64_t>();
  CHECK(d.last({{"type", "feedback"}, {"utterance_id", id2}, {"outcome", "confirm"}}).at("sample_added") == false);
  out = d.speak("K33NNN");
  const auto id3 = out.back().at("utterance_id").get<std::uint64_t>();
  CHECK(d.last({{"type", "feedback"}, {"utterance_id", id3}, {"outcome", "correct"}, {"label", "up"}})
            .at("sample_added") == true);
  CHECK(error_code(d.send({{"type", "feedback"}, {"utterance_id", id3 + 50}, {"outcome", "confirm"}})) ==
        "unknown_utterance");
}

TEST_CASE("misactivation reports refit the keyword model") {
  Driver d;
  d.setup();
  d.send({{"type", "set_mode"}, {"mode", "active_learning"}});
  const auto out = d.speak("KNNNNN");
  REQUIRE_FALSE(out.empty());
  const auto id = out.front().at("utterance_id").get<std::uint64_t>();
  const auto m = d.last({{"type", "report_misactivation"}, {"utterance_id", id}});
  CHECK(m.at("kind") == "misactivation_reported");
  CHECK(m.at("negatives") == 1);
  CHECK(d.session.registry().keyword().negatives.size() == 1);
  CHECK(error_code(d.send({{"type", "report_misactivation"}, {"utterance_id", id}})) == "unknown_utterance");
}

TEST_CASE("utterances before any model report an error") {
  Driver d;
  d.send({{"type", "inject_sample"}, {"role", "keyword"}, {"embedding", emb(test::basis(kDim, 0))}});
  d.send({{"type", "inject_sample"}, {"role", "non_speaking"}, {"embedding", emb(test::basis(kDim, 1))}});
  d.send({{"type", "set_mode"}, {"mode", "register"}});
  const auto out = d.speak("K22NNN");
  REQUIRE_FALSE(out.empty());
  CHECK(out.back().at("type") == "error");
  CHECK(out.back().at("code") == "insufficient_data");
}

TEST_CASE("embeddings that are already unit length keep their exact bits") {
  Driver d;
  d.setup();
  d.send({{"type", "set_mode"}, {"mode", "register"}});
  const std::vector<float> raw = {0.6f, 0.8f, 0.0f, 0.0f, 0.0f, 0.0f};
  d.send({{"type", "inject_sample"}, {"label", "exact"}, {"embedding", raw}});
  const auto& stored = d.session.registry().find("exact")->samples.front().embedding;
  CHECK(std::vector<float>(stored.values().begin(), stored.values().end()) == raw);
  d.send({{"type", "inject_sample"}, {"label", "scaled"}, {"embedding", {3.0, 4.0, 0, 0, 0, 0}}});
  CHECK(d.session.registry().find("scaled")->samples.front().embedding[0] == doctest::Approx(0.6));
}

TEST_CASE("bye autosaves and closes; a saved registry restores the session") {
  const auto dir = scratch("autosave");
  SessionOptions opts;
  opts.registry_path = dir / "reg.json";
  json saved_commands;
  {
    Driver d(opts);
    d.setup();
    CHECK(d.last({{"type", "save"}}).at("kind") == "saved");
    d.send({{"type", "set_mode"}, {"mode", "active_learning"}});
    const auto bye = d.last({{"type", "bye"}});
    CHECK(bye.at("kind") == "bye");
    CHECK(d.session.closed());
    CHECK(error_code(d.send({{"type", "hello"}})) == "protocol");
    saved_commands = d.session.registry().to_json();
  }
  const auto reg = CommandRegistry::load(dir / "reg.json");
  CHECK(reg.to_json() == saved_commands);
  CHECK(reg.mode() == LearningMode::ActiveLearning);
  Session restored(reg);
  CHECK(restored.model_generation() == 1);
  CHECK(restored.engine().ready());
  const auto hello = restored.handle({{"type", "hello"}}).front();
  CHECK(hello.at("commands").size() == 2);
  CHECK(hello.at("keyword_ready") == true);
  std::filesystem::remove_all(dir);
}

TEST_CASE("TCP transport round trip") {
  Session session{CommandRegistry(kDim)};
  std::mutex mu;
  std::condition_variable cv;
  std::uint16_t port = 0;
  std::thread server([&] {
    serve_tcp(session, 0, [&](std::uint16_t p) {
      std::lock_guard lock(mu);
      port = p;
      cv.notify_all();
    });
  });
  {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return port != 0; });
  }
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  const std::string request = "{\"type\":\"hello\"}\n{\"type\":\"bye\"}\n";
  REQUIRE(::send(fd, request.data(), request.size(), 0) == static_cast<ssize_t>(request.size()));
  std::string reply;
  char buf[4096];
  for (ssize_t n; (n = ::recv(fd, buf, sizeof buf, 0)) > 0;) reply.append(buf, static_cast<std::size_t>(n));
  ::close(fd);
  server.join();
  std::istringstream lines(reply);
  std::string first, second;
  std::getline(lines, first);
  std::getline(lines, second);
  CHECK(json::parse(first).at("type") == "hello");
  CHECK(json::parse(second).at("kind") == "bye");
  CHECK(session.closed());
}
