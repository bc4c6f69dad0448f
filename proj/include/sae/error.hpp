#pragma once

#include <stdexcept>
#include <string>

namespace sae {

// Bad input, configuration or precondition. The CLI maps this to exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimizer failure, singular system, degenerate fit. Exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sae
