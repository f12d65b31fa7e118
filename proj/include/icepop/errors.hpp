#ifndef ICEPOP_ERRORS_HPP_
#define ICEPOP_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace icepop {

// Non-finite logits, weights, ratios or gradients.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The scheduler exceeded its per-iteration tick cap without reaching the token budget.
class TickCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace icepop

#endif  // ICEPOP_ERRORS_HPP_
