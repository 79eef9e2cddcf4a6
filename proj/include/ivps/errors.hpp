#pragma once

#include <stdexcept>
#include <string>

namespace ivps {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on a problem, trajectory or option set was violated.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Times do not line up with the grid they are sampled from.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

class IntegrationDiverged : public Error {
 public:
  IntegrationDiverged(double last_finite_time, const std::string& what)
      : Error(what), last_finite_time_(last_finite_time) {}
  double last_finite_time() const { return last_finite_time_; }

 private:
  double last_finite_time_;
};

class InsufficientData : public Error {
 public:
  InsufficientData(double t, const std::string& what) : Error(what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

class SingularFit : public Error {
 public:
  using Error::Error;
};

/// Euler-angle kinematics evaluated too close to pitch = +-pi/2.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class StationarityError : public Error {
 public:
  StationarityError(double residual, const std::string& what)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class IterationStarved : public Error {
 public:
  IterationStarved(int iteration, const std::string& what)
      : Error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

}  // namespace ivps
