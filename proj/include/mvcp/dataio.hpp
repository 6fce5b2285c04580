#ifndef MVCP_DATAIO_HPP
#define MVCP_DATAIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mvcp/model.hpp"
#include "mvcp/types.hpp"

namespace mvcp {

// Synthetic residual generator: a Gaussian or a Gaussian mixture.
struct GeneratorSpec {
  struct Component {
    double weight = 1.0;
    Vec center;
    Mat cov;
  };

  enum class Kind { Gaussian, Mixture } kind = Kind::Gaussian;
  int n_y = 1;
  Mat cov;                           // Gaussian only
  std::vector<Component> components; // Mixture only

  void validate() const;

  static GeneratorSpec gaussian(const Mat& cov);
  static GeneratorSpec gaussian_diag(const Vec& variances);
  // Tri-modal 2-D mixture with anisotropic components; the default desk-scale
  // stand-in for clustered residuals.
  static GeneratorSpec trimodal2d();
};

// i.i.d. draws: Cholesky factor applied to Box-Muller standard normals from
// the seeded stream; mixtures pick the component first. Deterministic per
// seed. Throws NonPsdCovariance for invalid covariances.
ResidualMatrix gen_residuals(const GeneratorSpec& spec, long n,
                             std::uint64_t seed);

GeneratorSpec parse_generator_json(const std::string& text);
GeneratorSpec load_generator(const std::string& path);
std::string generator_to_json(const GeneratorSpec& spec);

// CSV with header "r1,...,r{n_y}", one sample per row, shortest round-trip
// decimals, LF line endings. read(write(x)) == x bit-exactly.
void write_residuals_csv(const ResidualMatrix& set, const std::string& path);
ResidualMatrix read_residuals_csv(const std::string& path);

// Serialized calibrated model. `rho` is set for removal-based methods,
// (phi, d, n_eval) for relaxation-based ones.
struct ModelRecord {
  int schema_version = 1;
  std::string family_kind;  // sphere | interval | ellipsoid | union | rbf
  int n_y = 0;
  int components = 1;
  std::vector<double> q;
  std::string method;
  Certificate certificate;
  long n_cal = 0;
  double eps = 0.0;
  std::uint64_t seed = 0;
  std::optional<long> rho;
  std::optional<double> phi;
  std::optional<long> d;
  std::optional<long> n_eval;
};

ModelRecord record_from_model(const CalibratedModel& model);
CalibratedModel model_from_record(const ModelRecord& record);

// Strict JSON persistence: unknown keys and schema_version mismatches are
// rejected with SchemaMismatch; numbers round-trip bit-exactly.
void save_model(const ModelRecord& record, const std::string& path);
ModelRecord load_model(const std::string& path);

// shortest decimal representation that parses back to the same double
std::string format_double(double x);

}  // namespace mvcp

#endif  // MVCP_DATAIO_HPP
