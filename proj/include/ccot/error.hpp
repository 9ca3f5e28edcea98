#pragma once

#include <stdexcept>
#include <string>

namespace ccot {

// A documented precondition or invariant was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A file or wire payload could not be parsed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training or optimization produced a non-finite value.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void contract_fail(const std::string& what) { throw ContractError(what); }

inline void require(bool ok, const std::string& what) {
  if (!ok) contract_fail(what);
}

}  // namespace ccot
