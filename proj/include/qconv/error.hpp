#pragma once

#include <stdexcept>
#include <string>

namespace qconv {

// Gradient below the d0 floor; level-set geometry is undefined there.
class DegenerateGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Working coordinates have u_n <= 0; the caller must rotate first.
class CoordinateDegeneracy : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Augmented state outside the open set where A is invertible.
class DegenerateState : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Point too close to the boundary for a derivative stencil.
class ExtrapolationRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LevelRangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qconv
