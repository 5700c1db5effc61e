#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace prefkit {

// Record or configuration fails its invariants.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Validation failure of one record inside a batch.
class RecordError : public ValidationError {
 public:
  RecordError(std::size_t index, const std::string& what)
      : ValidationError("record " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An image reference that cannot be read.
class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Attempt {
  int number = 0;
  double latency_ms = 0.0;
  std::string error;
};

// Transport failure after all retries are spent.
class EndpointError : public std::runtime_error {
 public:
  EndpointError(std::string endpoint_id, std::vector<Attempt> attempts, const std::string& what)
      : std::runtime_error(what), endpoint_id_(std::move(endpoint_id)), attempts_(std::move(attempts)) {}
  const std::string& endpoint_id() const noexcept { return endpoint_id_; }
  const std::vector<Attempt>& attempts() const noexcept { return attempts_; }

 private:
  std::string endpoint_id_;
  std::vector<Attempt> attempts_;
};

// Endpoint answered, but the reply breaks the wire contract.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(const std::string& what, std::string raw_body)
      : std::runtime_error(what), raw_body_(std::move(raw_body)) {}
  const std::string& raw_body() const noexcept { return raw_body_; }

 private:
  std::string raw_body_;
};

// Judge replies stayed unusable after every re-ask.
class VerdictFailure : public std::runtime_error {
 public:
  VerdictFailure(const std::string& what, std::vector<std::string> raw_replies)
      : std::runtime_error(what), raw_replies_(std::move(raw_replies)) {}
  const std::vector<std::string>& raw_replies() const noexcept { return raw_replies_; }

 private:
  std::vector<std::string> raw_replies_;
};

}  // namespace prefkit
