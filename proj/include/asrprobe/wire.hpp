#pragma once

// Client side of the line-delimited JSON scorer protocol.
//
//   -> {"op":"hello","proto":1}
//   <- {"op":"hello","proto":1,"model":"...","vocab_size":N}
//   -> {"op":"vocab"}
//   <- {"op":"vocab","tokens":[{"id":0,"surface":"...","special":false},...],"more":true}
//   <- ... last chunk has "more":false or omits it
//   -> {"op":"tokenize","text":"..."}
//   <- {"op":"tokenize","ids":[...]}
//   -> {"op":"score","id":7,"context":[...],"target":42}
//   <- {"op":"score","id":7,"ln_p":-3.2}
//   <- {"op":"error","id":7|null,"reason":"..."}
//
// Score responses may arrive in any order; they are matched by id.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "asrprobe/scorer.hpp"

namespace asrprobe {

inline constexpr int kProtocolVersion = 1;

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  /// Appends '\n'. Throws TransportError.
  virtual void write_line(std::string_view line) = 0;
  /// nullopt on timeout; throws TransportError on EOF or I/O failure.
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
};

/// Channel over a pair of file descriptors (pipe ends or one socket used for
/// both directions). Owns the descriptors and, optionally, a child process.
class FdChannel final : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, int child_pid = -1);
  ~FdChannel() override;
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  void write_line(std::string_view line) override;
  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override;
  void close() override;

 private:
  int read_fd_;
  int write_fd_;
  int child_pid_;
  std::string buffer_;
};

/// "tcp:HOST:PORT" or "exec:COMMAND" (run through /bin/sh -c, protocol on
/// the child's stdin/stdout).
struct Endpoint {
  enum class Kind { Tcp, Exec };
  Kind kind = Kind::Exec;
  std::string host;
  int port = 0;
  std::string command;

  static Endpoint parse(std::string_view text);
  std::string to_string() const;
};

std::unique_ptr<LineChannel> open_channel(const Endpoint& endpoint);

struct Handshake {
  int proto = 0;
  std::string model;
  std::size_t vocab_size = 0;
};

struct VocabEntry {
  TokenId id = 0;
  std::string surface;
  bool special = false;
};

/// Raw protocol result: ln_p in nats.
struct WireScore {
  double ln_p = 0.0;
  std::string error;
  bool done = false;
};

struct WireOptions {
  std::size_t max_in_flight = 64;
  std::chrono::milliseconds timeout{30000};
  /// Attempts per request, counting the first send.
  int max_attempts = 3;
};

class WireClient {
 public:
  WireClient(std::unique_ptr<LineChannel> channel, WireOptions options = {});

  /// Throws ProtocolError on a version mismatch.
  Handshake hello();
  std::vector<VocabEntry> fetch_vocab();
  std::vector<TokenId> tokenize(std::string_view text);

  /// Pipelines up to max_in_flight requests. Fills `results` in place so a
  /// TransportError leaves completed slots intact. Slots already marked done
  /// are skipped.
  void score_many(std::span<const ScoreRequest> requests, std::vector<WireScore>& results);

  bool open() const { return channel_ != nullptr; }
  std::uint64_t requests_sent() const { return next_id_; }

 private:
  std::string read_record(std::chrono::milliseconds timeout);
  [[noreturn]] void reset(const std::string& why);

  std::unique_ptr<LineChannel> channel_;
  WireOptions options_;
  std::uint64_t next_id_ = 0;
};

/// Scorer whose score() is answered by a remote peer. Reconnects through the
/// stored endpoint after a transport failure.
class ExternalScorer final : public Scorer {
 public:
  ExternalScorer(Endpoint endpoint, WireOptions options);
  ExternalScorer(std::function<std::unique_ptr<LineChannel>()> connector, std::string name,
                 WireOptions options);

  double score(const ScoreRequest& request) override;
  std::vector<ScoreOutcome> score_batch(std::span<const ScoreRequest> requests) override;
  std::string name() const override { return name_; }

  const Handshake& handshake() const { return handshake_; }
  WireClient& client() { return *client_; }
  int reconnects() const { return reconnects_; }

 private:
  void connect();

  std::function<std::unique_ptr<LineChannel>()> connector_;
  std::string name_;
  WireOptions options_;
  std::unique_ptr<WireClient> client_;
  Handshake handshake_;
  int reconnects_ = 0;
};

struct ExternalConnection {
  std::unique_ptr<ExternalScorer> scorer;
  Vocabulary vocabulary;
  Handshake handshake;
  TokenId separator = 0;
};

/// Handshake, vocabulary fetch and exclusion of special tokens plus the
/// separator (looked up by surface).
ExternalConnection external_scorer_connect(const Endpoint& endpoint, WireOptions options,
                                           std::string_view separator_surface = ".");
ExternalConnection external_scorer_connect(
    std::function<std::unique_ptr<LineChannel>()> connector, std::string name,
    WireOptions options, std::string_view separator_surface = ".");

}  // namespace asrprobe
