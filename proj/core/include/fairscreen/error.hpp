#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fairscreen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad operator input: flags, config files, manifest mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

class GatewayError : public Error {
 public:
  using Error::Error;
};

class ReplayMissError : public GatewayError {
 public:
  explicit ReplayMissError(std::string key)
      : GatewayError("replay miss: no transcript entry for key " + key), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class VerdictParseError : public Error {
 public:
  explicit VerdictParseError(std::string raw)
      : Error("unparseable verdict: \"" + raw + "\""), raw_(std::move(raw)) {}
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

// A verdict that could not be parsed under the "fail" policy.
class ClassificationError : public Error {
 public:
  ClassificationError(std::string stimulus_id, const VerdictParseError& cause)
      : Error("stimulus " + stimulus_id + ": " + cause.what()),
        stimulus_id_(std::move(stimulus_id)),
        raw_(cause.raw()) {}
  const std::string& stimulus_id() const noexcept { return stimulus_id_; }
  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string stimulus_id_;
  std::string raw_;
};

// Predictions do not line up one-to-one with the gold stimuli.
class CoverageError : public Error {
 public:
  CoverageError(std::vector<std::string> missing, std::vector<std::string> extra,
                std::vector<std::string> duplicated = {});
  const std::vector<std::string>& missing() const noexcept { return missing_; }
  const std::vector<std::string>& extra() const noexcept { return extra_; }
  const std::vector<std::string>& duplicated() const noexcept { return duplicated_; }

 private:
  std::vector<std::string> missing_;
  std::vector<std::string> extra_;
  std::vector<std::string> duplicated_;
};

}  // namespace fairscreen
