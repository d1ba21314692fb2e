#pragma once

#include <stdexcept>
#include <string>

namespace sepipe {

// Error taxonomy used across the library. Everything derives from Error so
// callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct StateError : Error {
  using Error::Error;
};

struct ContractError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

// Bad content in user-supplied data (missing files, undecodable images).
struct DataError : Error {
  using Error::Error;
};

// Syntactic errors in manifests, PGM headers, config files.
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace sepipe
