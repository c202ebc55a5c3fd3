#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace corpuskit {

// Base for every failure caused by input data (as opposed to usage errors).
// The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class MalformedLine : public DataError {
 public:
  MalformedLine(std::uint64_t line_no, const std::string& why)
      : DataError("malformed line " + std::to_string(line_no) + ": " + why), line_no_(line_no) {}
  std::uint64_t line_no() const noexcept { return line_no_; }

 private:
  std::uint64_t line_no_;
};

class EmptyDocument : public DataError {
 public:
  EmptyDocument() : DataError("document has no shingles") {}
};

class LengthMismatch : public DataError {
 public:
  using DataError::DataError;
};

class EmptyCorpus : public DataError {
 public:
  EmptyCorpus() : DataError("corpus is empty") {}
};

class EmptyInput : public DataError {
 public:
  using DataError::DataError;
};

class UnknownId : public DataError {
 public:
  explicit UnknownId(std::uint64_t id)
      : DataError("unknown token id " + std::to_string(id)), id_(id) {}
  std::uint64_t id() const noexcept { return id_; }

 private:
  std::uint64_t id_;
};

class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class TokenOverflow : public DataError {
 public:
  explicit TokenOverflow(std::uint64_t id)
      : DataError("token id " + std::to_string(id) + " does not fit in 2 bytes") {}
};

class MixedGeometry : public DataError {
 public:
  using DataError::DataError;
};

class DuplicatePath : public DataError {
 public:
  using DataError::DataError;
};

class IntegrityError : public DataError {
 public:
  IntegrityError(std::string shard, std::string expected, std::string actual)
      : DataError("digest mismatch in " + shard + ": expected " + expected + ", got " + actual),
        shard_(std::move(shard)),
        expected_(std::move(expected)),
        actual_(std::move(actual)) {}
  const std::string& shard() const noexcept { return shard_; }
  const std::string& expected() const noexcept { return expected_; }
  const std::string& actual() const noexcept { return actual_; }

 private:
  std::string shard_, expected_, actual_;
};

class IndexOutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class OutOfRange : public DataError {
 public:
  using DataError::DataError;
};

class InvalidDistribution : public DataError {
 public:
  using DataError::DataError;
};

class NonMonotonicStep : public DataError {
 public:
  using DataError::DataError;
};

class NoCheckpointAvailable : public DataError {
 public:
  NoCheckpointAvailable() : DataError("loss spike before any checkpoint was recorded") {}
};

}  // namespace corpuskit
