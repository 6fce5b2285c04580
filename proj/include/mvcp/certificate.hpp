#ifndef MVCP_CERTIFICATE_HPP
#define MVCP_CERTIFICATE_HPP

#include <optional>
#include <string>
#include <utility>

namespace mvcp {

// Finite-sample guarantee attached to a calibrated model. `expected_bound`
// bounds the expected miscoverage; `beta` is the probability that the
// realized coverage falls below 1 - eps_target. When the coverage law is
// known exactly, `beta_dist` holds its Beta(a, b) parameters.
struct Certificate {
  std::string method;           // remmcp | relmcp | scp
  double eps_target = 0.0;
  double expected_bound = 1.0;
  double beta = 1.0;
  std::optional<std::pair<double, double>> beta_dist;
  bool assumptions_convex = false;
  // RelMCP's adaptive penalty search chooses the grid from data, so the
  // a-priori guarantee does not apply verbatim; flagged on its certificates.
  bool adaptive_penalty_grid = false;
};

}  // namespace mvcp

#endif  // MVCP_CERTIFICATE_HPP
