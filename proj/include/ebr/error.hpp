#pragma once

#include <stdexcept>
#include <string>

namespace ebr {

/// Base of every error raised by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

class InsufficientCandidates : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class VocabularyMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class MissingReference : public Error {
 public:
  using Error::Error;
};

class MissingModel : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised when a loss becomes NaN/inf. Carries where it happened.
class DivergedTraining : public Error {
 public:
  DivergedTraining(int epoch, long step)
      : Error("training diverged at epoch " + std::to_string(epoch) + ", step " +
              std::to_string(step)),
        epoch_(epoch),
        step_(step) {}

  int epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  int epoch_;
  long step_;
};

}  // namespace ebr
