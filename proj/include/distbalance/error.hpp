#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace distbalance {

enum class ErrorKind {
  input,             // malformed data or arguments
  domain,            // argument outside its mathematical domain
  invalid_weights,   // nonpositive or empty weight mass
  support,           // quantile constraint without support in the sample
  infeasible,        // targets outside the reachable set
  convergence,       // iterative solver did not converge
  singular,          // rank-deficient constraint system
  overlap,           // propensity scores pinned at 0 or 1
};

std::string_view to_string(ErrorKind kind) noexcept;

// Process exit code used by the command-line tool for each error kind.
int exit_code(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& message, double residual, int iterations)
      : Error(ErrorKind::convergence, message),
        residual_(residual),
        iterations_(iterations) {}

  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

}  // namespace distbalance
