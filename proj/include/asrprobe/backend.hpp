#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "asrprobe/experiment.hpp"
#include "asrprobe/wire.hpp"

namespace asrprobe {

/// A scorer source resolved from a spec string:
///   uniform:V            uniform over a synthetic vocabulary of V tokens
///   oracle:ALPHA[:V]     pattern oracle, V defaults to 1000
///   unigram:PATH         unigram counts, one "surface count" pair per line
///   exec:COMMAND         external scorer on a child process's stdin/stdout
///   tcp:HOST:PORT        external scorer over TCP
struct Backend {
  ScorerDescriptor descriptor;
  Vocabulary vocabulary;
  /// Makes one scorer per worker; external scorers open a new connection.
  ScorerFactory factory;
  /// Handshake metadata for the run manifest.
  nlohmann::json metadata;
  std::optional<Endpoint> endpoint;
};

Backend open_backend(std::string_view spec, const WireOptions& wire = {},
                     std::string_view separator = ".");

}  // namespace asrprobe
