// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lipcmd/classifier.hpp"
#include "lipcmd/kws.hpp"
#include "lipcmd/registry.hpp"

namespace lipcmd {

inline constexpr int kProtocolVersion = 1;

struct SessionOptions {
  std::optional<std::filesystem::path> registry_path;  // save target; auto-saved on close
  bool autosave = true;
  bool report_durations = true;  // false: retrained.duration_ms is always 0 (golden transcripts)
  FitConfig fit;
};

/// One user session: keyword spotter, classifier and registry behind the
/// line protocol. Transport-agnostic; every inbound line yields zero or more
/// outbound lines, in causal order.
///
/// Inbound types: hello, window, set_mode, register, inject_sample, feedback,
/// report_misactivation, retrain, save, bye. Outbound types: hello, event,
/// prediction, retrained, error.
class Session {
 public:
  explicit Session(CommandRegistry registry, SessionOptions options = {});

  /// Handles one protocol line. Malformed input produces an error message;
  /// the session stays usable.
  std::vector<std::string> handle_line(std::string_view line);
  std::vector<nlohmann::json> handle(const nlohmann::json& message);

  /// Saves the registry if a path is configured. Called on bye and on
  /// transport loss; safe to call more than once.
  void close();

  bool closed() const noexcept { return closed_; }
  const CommandRegistry& registry() const noexcept { return registry_; }
  const KwsEngine& engine() const noexcept { return engine_; }
  std::uint64_t model_generation() const noexcept { return model_gen_; }
  std::shared_ptr<const LinearClassifier> model() const noexcept { return model_; }

 private:
  using Out = std::vector<nlohmann::json>;

  void on_hello(const nlohmann::json& msg, Out& out);
  void on_window(const nlohmann::json& msg, Out& out);
  void on_set_mode(const nlohmann::json& msg, Out& out);
  void on_register(const nlohmann::json& msg, Out& out);
  void on_inject(const nlohmann::json& msg, Out& out);
  void on_feedback(const nlohmann::json& msg, Out& out);
  void on_misactivation(const nlohmann::json& msg, Out& out);
  void on_retrain(Out& out);
  void on_save(Out& out);
  void on_bye(Out& out);
  void on_utterance(const SessionEvent& ev, Out& out);
  void initialize_keyword_if_staged();
  UnitEmbedding embedding_from(const nlohmann::json& msg) const;

  CommandRegistry registry_;
  SessionOptions options_;
  KwsEngine engine_;
  std::shared_ptr<const LinearClassifier> model_;
  std::uint64_t model_gen_ = 0;
  std::optional<std::string> pending_registration_;
  std::vector<UnitEmbedding> staged_keyword_;
  std::vector<UnitEmbedding> staged_non_speaking_;
  std::optional<std::int64_t> last_window_ms_;
  bool closed_ = false;
};

/// Feeds every line of `in` to the session and writes the responses to
/// `out`, one per line. Ends at EOF or after bye, then closes the session.
void run_stream(Session& session, std::istream& in, std::ostream& out);

/// Accepts one client on 127.0.0.1:`port` and serves it until bye or
/// disconnect. `on_listening` receives the bound port (useful with port 0).
void serve_tcp(Session& session, std::uint16_t port,
               const std::function<void(std::uint16_t)>& on_listening = {});

}  // namespace lipcmd
