#ifndef CHNS_ERRORS_HPP
#define CHNS_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace chns {

// Mesh fails the barycenter-orthogonality requirement that the two-point
// normal-derivative surrogate on interior edges relies on.
class HypothesisViolation : public std::runtime_error {
public:
  HypothesisViolation(std::size_t edge, double defect)
      : std::runtime_error("barycenter-orthogonality violated on interior edge " +
                           std::to_string(edge) + " (relative defect " +
                           std::to_string(defect) + ")"),
        edge_index(edge), relative_defect(defect) {}
  std::size_t edge_index;
  double relative_defect;
};

class BoundViolation : public std::runtime_error {
public:
  BoundViolation(double mn, double mx, const std::string &what_field)
      : std::runtime_error("phase field out of [-1,1]: min=" + std::to_string(mn) +
                           " max=" + std::to_string(mx) + " (" + what_field + ")"),
        min_value(mn), max_value(mx) {}
  double min_value;
  double max_value;
};

class MassDrift : public std::runtime_error {
public:
  MassDrift(double drift, double tol)
      : std::runtime_error("phase-field mass drift " + std::to_string(drift) +
                           " exceeds tolerance " + std::to_string(tol)),
        drift_value(drift), tolerance(tol) {}
  double drift_value;
  double tolerance;
};

class NonConvergence : public std::runtime_error {
public:
  NonConvergence(int iters, double last_res)
      : std::runtime_error("Newton did not converge after " + std::to_string(iters) +
                           " iterations (last residual " + std::to_string(last_res) + ")"),
        iterations(iters), last_residual(last_res) {}
  int iterations;
  double last_residual;
  long step_index = -1; // filled by the time loop
};

class LinearSolveFailure : public std::runtime_error {
public:
  explicit LinearSolveFailure(const std::string &detail)
      : std::runtime_error("linear solve failed: " + detail) {}
};

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &detail)
      : std::runtime_error("config error: " + detail) {}
};

} // namespace chns

#endif
