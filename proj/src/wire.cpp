#include "asrprobe/wire.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <deque>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "asrprobe/errors.hpp"

extern char** environ;

namespace asrprobe {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

void ignore_sigpipe() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

}  // namespace

FdChannel::FdChannel(int read_fd, int write_fd, int child_pid)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid) {
  ignore_sigpipe();
}

FdChannel::~FdChannel() { close(); }

void FdChannel::write_line(std::string_view line) {
  if (write_fd_ < 0) throw TransportError("channel is closed");
  std::string data(line);
  data += '\n';
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("write"));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> FdChannel::read_line(std::chrono::milliseconds timeout) {
  if (read_fd_ < 0) throw TransportError("channel is closed");
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd pfd{read_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("poll"));
    }
    if (rc == 0) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(errno_text("read"));
    }
    if (n == 0) throw TransportError("peer closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void FdChannel::close() {
  if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  if (read_fd_ >= 0) ::close(read_fd_);
  read_fd_ = write_fd_ = -1;
  if (child_pid_ > 0) {
    // Closing stdin asks the peer to exit; give it a moment before SIGTERM.
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(child_pid_, &status, WNOHANG) != 0) {
        child_pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(child_pid_, SIGTERM);
    ::waitpid(child_pid_, &status, 0);
    child_pid_ = -1;
  }
}

Endpoint Endpoint::parse(std::string_view text) {
  Endpoint ep;
  if (text.rfind("exec:", 0) == 0) {
    ep.kind = Kind::Exec;
    ep.command = std::string(text.substr(5));
    if (ep.command.empty()) throw ConfigError("exec endpoint needs a command");
    return ep;
  }
  if (text.rfind("tcp:", 0) == 0) {
    ep.kind = Kind::Tcp;
    const auto rest = text.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string_view::npos || colon == 0) {
      throw ConfigError("tcp endpoint must look like tcp:HOST:PORT");
    }
    ep.host = std::string(rest.substr(0, colon));
    try {
      ep.port = std::stoi(std::string(rest.substr(colon + 1)));
    } catch (const std::exception&) {
      throw ConfigError("bad port in endpoint '" + std::string(text) + "'");
    }
    if (ep.port <= 0 || ep.port > 65535) throw ConfigError("port out of range");
    return ep;
  }
  throw ConfigError("unknown endpoint '" + std::string(text) + "' (expected exec: or tcp:)");
}

std::string Endpoint::to_string() const {
  if (kind == Kind::Exec) return "exec:" + command;
  return "tcp:" + host + ":" + std::to_string(port);
}

namespace {

std::unique_ptr<LineChannel> spawn_child(const std::string& command) {
  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw TransportError(errno_text("pipe"));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError(errno_text("pipe"));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::string sh = "/bin/sh", dash_c = "-c", cmd = command;
  char* argv[] = {sh.data(), dash_c.data(), cmd.data(), nullptr};
  pid_t pid = -1;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw TransportError(std::string("spawn failed: ") + std::strerror(rc));
  }
  return std::make_unique<FdChannel>(from_child[0], to_child[1], pid);
}

std::unique_ptr<LineChannel> connect_tcp(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_text = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res); rc != 0) {
    throw TransportError("resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + port_text);
  return std::make_unique<FdChannel>(fd, fd);
}

json parse_record(const std::string& line) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error&) {
    throw TransportError("malformed response line: " + line.substr(0, 200));
  }
  if (!rec.is_object() || !rec.contains("op") || !rec["op"].is_string()) {
    throw TransportError("response without op: " + line.substr(0, 200));
  }
  return rec;
}

}  // namespace

std::unique_ptr<LineChannel> open_channel(const Endpoint& endpoint) {
  if (endpoint.kind == Endpoint::Kind::Exec) return spawn_child(endpoint.command);
  return connect_tcp(endpoint.host, endpoint.port);
}

WireClient::WireClient(std::unique_ptr<LineChannel> channel, WireOptions options)
    : channel_(std::move(channel)), options_(options) {
  if (options_.max_in_flight == 0) throw ConfigError("max_in_flight must be positive");
  if (options_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
}

void WireClient::reset(const std::string& why) {
  if (channel_) channel_->close();
  channel_.reset();
  throw TransportError(why);
}

std::string WireClient::read_record(std::chrono::milliseconds timeout) {
  if (!channel_) throw TransportError("connection was reset");
  std::optional<std::string> line;
  try {
    line = channel_->read_line(timeout);
  } catch (const TransportError& e) {
    reset(e.what());
  }
  if (!line) reset("timed out waiting for the scorer");
  return *line;
}

Handshake WireClient::hello() {
  if (!channel_) throw TransportError("connection was reset");
  channel_->write_line(json{{"op", "hello"}, {"proto", kProtocolVersion}}.dump());
  json rec;
  try {
    rec = parse_record(read_record(options_.timeout));
  } catch (const TransportError& e) {
    reset(e.what());
  }
  if (rec["op"] == "error") {
    throw ProtocolError("handshake rejected: " + rec.value("reason", std::string("?")));
  }
  if (rec["op"] != "hello" || !rec.contains("proto") || !rec["proto"].is_number_integer()) {
    throw ProtocolError("unexpected handshake reply: " + rec.dump());
  }
  Handshake hs;
  hs.proto = rec["proto"].get<int>();
  if (hs.proto != kProtocolVersion) {
    throw ProtocolError("protocol version mismatch: peer speaks " + std::to_string(hs.proto) +
                        ", client speaks " + std::to_string(kProtocolVersion));
  }
  hs.model = rec.value("model", std::string());
  if (!rec.contains("vocab_size") || !rec["vocab_size"].is_number_unsigned()) {
    throw ProtocolError("handshake lacks vocab_size");
  }
  hs.vocab_size = rec["vocab_size"].get<std::size_t>();
  return hs;
}

std::vector<VocabEntry> WireClient::fetch_vocab() {
  if (!channel_) throw TransportError("connection was reset");
  channel_->write_line(json{{"op", "vocab"}}.dump());
  std::vector<VocabEntry> out;
  for (;;) {
    json rec;
    try {
      rec = parse_record(read_record(options_.timeout));
      if (rec["op"] == "error") {
        throw ProtocolError("vocabulary request failed: " + rec.value("reason", std::string()));
      }
      if (rec["op"] != "vocab" || !rec["tokens"].is_array()) {
        throw TransportError("unexpected vocabulary record: " + rec.dump().substr(0, 200));
      }
      for (const auto& t : rec["tokens"]) {
        out.push_back({t.at("id").get<TokenId>(), t.at("surface").get<std::string>(),
                       t.value("special", false)});
      }
    } catch (const json::exception& e) {
      reset(std::string("malformed vocabulary record: ") + e.what());
    } catch (const TransportError& e) {
      reset(e.what());
    }
    if (!rec.value("more", false)) break;
  }
  return out;
}

std::vector<TokenId> WireClient::tokenize(std::string_view text) {
  if (!channel_) throw TransportError("connection was reset");
  channel_->write_line(json{{"op", "tokenize"}, {"text", std::string(text)}}.dump());
  json rec;
  try {
    rec = parse_record(read_record(options_.timeout));
  } catch (const TransportError& e) {
    reset(e.what());
  }
  if (rec["op"] == "error") {
    throw ScoringError("tokenize failed: " + rec.value("reason", std::string()));
  }
  try {
    if (rec["op"] != "tokenize") throw TransportError("unexpected reply to tokenize");
    return rec.at("ids").get<std::vector<TokenId>>();
  } catch (const json::exception& e) {
    reset(std::string("malformed tokenize record: ") + e.what());
  } catch (const TransportError& e) {
    reset(e.what());
  }
  return {};
}

void WireClient::score_many(std::span<const ScoreRequest> requests,
                            std::vector<WireScore>& results) {
  results.resize(requests.size());
  struct Flight {
    std::size_t index;
    int attempt;
    Clock::time_point deadline;
  };
  std::unordered_map<std::uint64_t, Flight> in_flight;
  std::unordered_set<std::uint64_t> abandoned;
  std::deque<std::pair<std::size_t, int>> queue;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    if (!results[i].done) queue.emplace_back(i, 1);
  }

  while (!queue.empty() || !in_flight.empty()) {
    if (!channel_) throw TransportError("connection was reset");
    while (!queue.empty() && in_flight.size() < options_.max_in_flight) {
      const auto [index, attempt] = queue.front();
      queue.pop_front();
      const ScoreRequest& req = requests[index];
      if (req.context.empty()) {
        results[index] = {0.0, "empty context", true};
        continue;
      }
      const std::uint64_t id = next_id_++;
      json rec{{"op", "score"}, {"id", id}, {"context", req.context}, {"target", req.target}};
      try {
        channel_->write_line(rec.dump());
      } catch (const TransportError& e) {
        reset(e.what());
      }
      in_flight.emplace(id, Flight{index, attempt, Clock::now() + options_.timeout});
    }
    if (in_flight.empty()) continue;

    auto earliest = Clock::time_point::max();
    for (const auto& [id, f] : in_flight) earliest = std::min(earliest, f.deadline);
    const auto wait = std::max(std::chrono::milliseconds(0),
                               std::chrono::duration_cast<std::chrono::milliseconds>(
                                   earliest - Clock::now()));
    std::optional<std::string> line;
    try {
      line = channel_->read_line(wait);
    } catch (const TransportError& e) {
      reset(e.what());
    }

    if (!line) {
      const auto now = Clock::now();
      for (auto it = in_flight.begin(); it != in_flight.end();) {
        if (it->second.deadline > now) {
          ++it;
          continue;
        }
        abandoned.insert(it->first);
        const auto [index, attempt, deadline] = it->second;
        if (attempt < options_.max_attempts) {
          queue.emplace_back(index, attempt + 1);
        } else {
          results[index] = {0.0, "timeout after " + std::to_string(attempt) + " attempts", true};
        }
        it = in_flight.erase(it);
      }
      continue;
    }

    json rec;
    std::uint64_t id = 0;
    try {
      rec = parse_record(*line);
      const auto& op = rec["op"];
      if (op == "error" && (!rec.contains("id") || rec["id"].is_null())) {
        reset("scorer error: " + rec.value("reason", std::string("unspecified")));
      }
      if (op != "score" && op != "error") {
        throw TransportError("unexpected record during scoring: " + line->substr(0, 200));
      }
      id = rec.at("id").get<std::uint64_t>();
    } catch (const json::exception&) {
      reset("malformed response line: " + line->substr(0, 200));
    } catch (const TransportError& e) {
      reset(e.what());
    }

    if (abandoned.count(id)) continue;
    auto it = in_flight.find(id);
    if (it == in_flight.end()) reset("response for unknown request id " + std::to_string(id));
    const std::size_t index = it->second.index;
    in_flight.erase(it);

    if (rec["op"] == "error") {
      results[index] = {0.0, rec.value("reason", std::string("scorer error")), true};
      continue;
    }
    if (!rec.contains("ln_p") || !rec["ln_p"].is_number()) {
      reset("score record without ln_p: " + line->substr(0, 200));
    }
    double ln_p = rec["ln_p"].get<double>();
    // Tolerate float round-off just above zero from softmax implementations.
    if (ln_p > 0.0 && ln_p <= 1e-6) ln_p = 0.0;
    if (!std::isfinite(ln_p) || ln_p > 0.0) {
      results[index] = {0.0, "invalid ln_p " + std::to_string(ln_p), true};
    } else {
      results[index] = {ln_p, {}, true};
    }
  }
}

ExternalScorer::ExternalScorer(Endpoint endpoint, WireOptions options)
    : ExternalScorer([endpoint] { return open_channel(endpoint); }, endpoint.to_string(),
                     options) {}

ExternalScorer::ExternalScorer(std::function<std::unique_ptr<LineChannel>()> connector,
                               std::string name, WireOptions options)
    : connector_(std::move(connector)), name_(std::move(name)), options_(options) {
  connect();
}

void ExternalScorer::connect() {
  client_ = std::make_unique<WireClient>(connector_(), options_);
  handshake_ = client_->hello();
}

std::vector<ScoreOutcome> ExternalScorer::score_batch(std::span<const ScoreRequest> requests) {
  std::vector<WireScore> raw(requests.size());
  std::string last_error;
  for (int attempt = 1;; ++attempt) {
    try {
      if (!client_ || !client_->open()) {
        ++reconnects_;
        connect();
      }
      client_->score_many(requests, raw);
      break;
    } catch (const TransportError& e) {
      last_error = e.what();
      if (attempt >= options_.max_attempts) break;
    }
  }
  std::vector<ScoreOutcome> out(requests.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw[i].done) {
      out[i].error = "transport: " + last_error;
    } else if (!raw[i].error.empty()) {
      out[i].error = raw[i].error;
    } else {
      out[i].log2_p = ln_to_log2(raw[i].ln_p);
    }
  }
  return out;
}

double ExternalScorer::score(const ScoreRequest& request) {
  auto out = score_batch(std::span<const ScoreRequest>(&request, 1));
  if (!out[0].ok()) {
    if (out[0].error.rfind("transport: ", 0) == 0) throw TransportError(out[0].error);
    throw ScoringError(out[0].error);
  }
  return out[0].log2_p;
}

ExternalConnection external_scorer_connect(
    std::function<std::unique_ptr<LineChannel>()> connector, std::string name,
    WireOptions options, std::string_view separator_surface) {
  ExternalConnection conn;
  conn.scorer = std::make_unique<ExternalScorer>(std::move(connector), std::move(name), options);
  conn.handshake = conn.scorer->handshake();
  auto entries = conn.scorer->client().fetch_vocab();
  if (entries.size() != conn.handshake.vocab_size) {
    throw ProtocolError("handshake announced " + std::to_string(conn.handshake.vocab_size) +
                        " tokens but the vocabulary has " + std::to_string(entries.size()));
  }
  std::vector<Token> tokens;
  tokens.reserve(entries.size());
  for (const auto& e : entries) tokens.push_back({e.surface, e.id});
  conn.vocabulary = Vocabulary(std::move(tokens));
  for (const auto& e : entries) {
    if (e.special) conn.vocabulary.exclude(e.id);
  }
  const Token* sep = conn.vocabulary.find_surface(separator_surface);
  if (!sep) {
    throw ConfigError("separator '" + std::string(separator_surface) +
                      "' is not in the scorer vocabulary");
  }
  conn.separator = sep->id;
  conn.vocabulary.exclude(sep->id);
  return conn;
}

ExternalConnection external_scorer_connect(const Endpoint& endpoint, WireOptions options,
                                           std::string_view separator_surface) {
  return external_scorer_connect([endpoint] { return open_channel(endpoint); },
                                 endpoint.to_string(), options, separator_surface);
}

}  // namespace asrprobe
