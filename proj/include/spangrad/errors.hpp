#pragma once

#include <stdexcept>
#include <string>

namespace spangrad {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Gram matrix numerically singular with ridge regularization disabled.
class SingularGram : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteInput : public Error {
 public:
  using Error::Error;
};

// A softmax row with every entry masked.
class DegenerateRow : public Error {
 public:
  using Error::Error;
};

class TokenOutOfRange : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpus : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class DivergenceDetected : public Error {
 public:
  DivergenceDetected(long step, double loss)
      : Error("training diverged at step " + std::to_string(step) +
              " (loss = " + std::to_string(loss) + ")"),
        step_(step),
        loss_(loss) {}

  long step() const { return step_; }
  double loss() const { return loss_; }

 private:
  long step_;
  double loss_;
};

}  // namespace spangrad
