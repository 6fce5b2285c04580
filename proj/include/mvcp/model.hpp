#ifndef MVCP_MODEL_HPP
#define MVCP_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mvcp/certificate.hpp"
#include "mvcp/scores.hpp"

namespace mvcp {

// A score family bound to calibrated parameters, plus provenance.
struct CalibratedModel {
  PredictionSet set;
  std::string method;  // scp1 | scp-dim | scp-split-a | scp-split-b | remmcp | relmcp
  Certificate certificate;

  long n_cal = 0;
  double eps = 0.0;
  std::uint64_t seed = 0;

  // constraint-removal provenance
  long rho = -1;
  std::vector<int> removed;

  // constraint-relaxation provenance
  double phi = 0.0;
  long d = -1;
  long n_eval = -1;
};

}  // namespace mvcp

#endif  // MVCP_MODEL_HPP
