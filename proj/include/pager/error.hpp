#pragma once

#include <stdexcept>
#include <string>

namespace pager {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller supplied data that violates an operation's precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// An operation was invoked on an object that has not been trained/loaded.
class InvalidState : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset file (IDX, attribute list, image directory).
class ParseError : public Error {
 public:
  using Error::Error;
};

class CorruptArchive : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace detail
}  // namespace pager
