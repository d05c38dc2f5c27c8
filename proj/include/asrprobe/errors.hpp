#pragma once

#include <stdexcept>
#include <string>

namespace asrprobe {

/// Invalid configuration or precondition violation detected before any work runs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scorer rejected a request (unknown token, bad context). Not retryable.
class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The byte stream to an external scorer failed or carried garbage. Retryable
/// after reconnecting.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Peer speaks an incompatible protocol version. Fatal.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or schema-mismatched input file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace asrprobe
