#ifndef DYNROUTE_ERRORS_HPP_
#define DYNROUTE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace dynroute {

// Invalid static configuration: bad spec, mismatched shapes, unrealizable
// corpus patterns.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition of an API (non-scalar loss, wrong image size).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data such as annotations or image files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dynroute

#endif  // DYNROUTE_ERRORS_HPP_
