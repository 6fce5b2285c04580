#include "mvcp/dataio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mvcp/rng.hpp"

namespace mvcp {

using nlohmann::json;

namespace {

constexpr int kSchemaVersion = 1;

Eigen::LLT<Mat> checked_llt(const Mat& cov, const char* what) {
  if (cov.rows() != cov.cols())
    throw NonPsdCovariance(std::string(what) + ": covariance is not square");
  if (!cov.isApprox(cov.transpose(), 1e-12))
    throw NonPsdCovariance(std::string(what) + ": covariance is not symmetric");
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NonPsdCovariance(std::string(what) +
                           ": covariance is not positive definite");
  return llt;
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const char* where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok)
      throw SchemaMismatch(std::string("unknown key '") + key + "' in " + where);
  }
}

Mat mat_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty())
    throw SchemaMismatch(std::string(what) + ": expected a matrix");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Mat m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      throw SchemaMismatch(std::string(what) + ": ragged matrix rows");
    for (std::size_t k = 0; k < cols; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void GeneratorSpec::validate() const {
  if (n_y < 1) throw DomainError("generator: n_y must be >= 1");
  if (kind == Kind::Gaussian) {
    if (cov.rows() != n_y || cov.cols() != n_y)
      throw NonPsdCovariance("generator: covariance must be n_y x n_y");
    checked_llt(cov, "generator");
    return;
  }
  if (components.empty()) throw DomainError("generator: mixture has no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight > 0.0)) throw DomainError("generator: weights must be positive");
    if (c.center.size() != n_y)
      throw DomainError("generator: component center has wrong dimension");
    if (c.cov.rows() != n_y || c.cov.cols() != n_y)
      throw NonPsdCovariance("generator: component covariance must be n_y x n_y");
    checked_llt(c.cov, "generator");
    total += c.weight;
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw DomainError("generator: weights must sum to 1");
}

GeneratorSpec GeneratorSpec::gaussian(const Mat& cov) {
  GeneratorSpec spec;
  spec.kind = Kind::Gaussian;
  spec.n_y = static_cast<int>(cov.rows());
  spec.cov = cov;
  spec.validate();
  return spec;
}

GeneratorSpec GeneratorSpec::gaussian_diag(const Vec& variances) {
  return gaussian(variances.asDiagonal());
}

GeneratorSpec GeneratorSpec::trimodal2d() {
  GeneratorSpec spec;
  spec.kind = Kind::Mixture;
  spec.n_y = 2;
  auto add = [&](double w, double cx, double cy, double a, double b, double c) {
    Component comp;
    comp.weight = w;
    comp.center = Vec(2);
    comp.center << cx, cy;
    comp.cov = Mat(2, 2);
    comp.cov << a, b, b, c;
    spec.components.push_back(std::move(comp));
  };
  add(0.5, 0.0, 0.0, 0.8, 0.2, 0.3);
  add(0.3, 3.0, 1.0, 0.4, -0.1, 0.6);
  add(0.2, -2.0, 2.5, 0.5, 0.15, 0.25);
  spec.validate();
  return spec;
}

ResidualMatrix gen_residuals(const GeneratorSpec& spec, long n,
                             std::uint64_t seed) {
  spec.validate();
  if (n < 0) throw DomainError("gen_residuals: n must be >= 0");
  Rng rng(seed);
  ResidualMatrix out(n, spec.n_y);
  Vec z(spec.n_y);

  if (spec.kind == GeneratorSpec::Kind::Gaussian) {
    const Mat L = checked_llt(spec.cov, "generator").matrixL();
    for (long i = 0; i < n; ++i) {
      for (int j = 0; j < spec.n_y; ++j) z[j] = rng.normal();
      out.row(i) = (L * z).transpose();
    }
    return out;
  }

  std::vector<Mat> factors;
  factors.reserve(spec.components.size());
  for (const auto& c : spec.components)
    factors.push_back(checked_llt(c.cov, "generator").matrixL());
  const bool degenerate = spec.components.size() == 1;
  for (long i = 0; i < n; ++i) {
    std::size_t pick = 0;
    if (!degenerate) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (std::size_t k = 0; k < spec.components.size(); ++k) {
        acc += spec.components[k].weight;
        if (u < acc || k + 1 == spec.components.size()) {
          pick = k;
          break;
        }
      }
    }
    for (int j = 0; j < spec.n_y; ++j) z[j] = rng.normal();
    out.row(i) =
        (spec.components[pick].center + factors[pick] * z).transpose();
  }
  return out;
}

GeneratorSpec parse_generator_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("generator JSON: ") + e.what());
  }
  GeneratorSpec spec;
  reject_unknown_keys(j, {"kind", "n_y", "cov", "cov_diag", "components"},
                      "generator");
  try {
  const std::string kind = j.at("kind").get<std::string>();
  spec.n_y = j.at("n_y").get<int>();
  if (kind == "gaussian") {
    spec.kind = GeneratorSpec::Kind::Gaussian;
    if (j.contains("cov_diag")) {
      const auto diag = j.at("cov_diag").get<std::vector<double>>();
      spec.cov = Eigen::Map<const Vec>(diag.data(), diag.size()).asDiagonal();
    } else {
      spec.cov = mat_from_json(j.at("cov"), "generator cov");
    }
  } else if (kind == "mixture") {
    spec.kind = GeneratorSpec::Kind::Mixture;
    for (const auto& cj : j.at("components")) {
      reject_unknown_keys(cj, {"weight", "center", "cov"}, "mixture component");
      GeneratorSpec::Component c;
      c.weight = cj.at("weight").get<double>();
      const auto center = cj.at("center").get<std::vector<double>>();
      c.center = Eigen::Map<const Vec>(center.data(), center.size());
      c.cov = mat_from_json(cj.at("cov"), "component cov");
      spec.components.push_back(std::move(c));
    }
  } else {
    throw SchemaMismatch("generator kind must be 'gaussian' or 'mixture'");
  }
  } catch (const SchemaMismatch&) {
    throw;
  } catch (const json::exception& e) {
    throw SchemaMismatch(std::string("generator JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

GeneratorSpec load_generator(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open generator spec: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_generator_json(ss.str());
}

std::string generator_to_json(const GeneratorSpec& spec) {
  json j;
  j["n_y"] = spec.n_y;
  if (spec.kind == GeneratorSpec::Kind::Gaussian) {
    j["kind"] = "gaussian";
    j["cov"] = mat_to_json(spec.cov);
  } else {
    j["kind"] = "mixture";
    json comps = json::array();
    for (const auto& c : spec.components) {
      json cj;
      cj["weight"] = c.weight;
      cj["center"] = std::vector<double>(c.center.data(),
                                         c.center.data() + c.center.size());
      cj["cov"] = mat_to_json(c.cov);
      comps.push_back(cj);
    }
    j["components"] = comps;
  }
  return j.dump(2);
}

void write_residuals_csv(const ResidualMatrix& set, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  for (Eigen::Index j = 0; j < set.cols(); ++j) {
    if (j) out << ',';
    out << 'r' << (j + 1);
  }
  out << '\n';
  for (Eigen::Index i = 0; i < set.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.cols(); ++j) {
      if (j) out << ',';
      out << format_double(set(i, j));
    }
    out << '\n';
  }
  if (!out) throw ParseError("write failed: " + path);
}

ResidualMatrix read_residuals_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("empty residual CSV: " + path, 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto split = [](const std::string& s) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = s.find(',', start);
      fields.push_back(s.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return fields;
  };

  const std::size_t n_y = split(line).size();
  std::vector<double> values;
  long n_rows = 0;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() != n_y)
      throw RaggedRows("row has " + std::to_string(fields.size()) +
                           " fields, header has " + std::to_string(n_y),
                       line_no);
    for (const auto& f : fields) {
      double v = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc() || res.ptr != f.data() + f.size())
        throw ParseError("cannot parse '" + f + "' as a number", line_no);
      values.push_back(v);
    }
    ++n_rows;
  }
  ResidualMatrix out(n_rows, n_y);
  for (long i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < n_y; ++j) out(i, j) = values[i * n_y + j];
  return out;
}

namespace {

std::pair<std::string, int> family_kind_of(const ScoreFamily& family) {
  const std::string& name = family.name();
  const auto colon = name.find(':');
  if (colon == std::string::npos) return {name, 1};
  return {name.substr(0, colon), std::stoi(name.substr(colon + 1))};
}

json certificate_to_json(const Certificate& cert) {
  json j;
  j["method"] = cert.method;
  j["eps_target"] = cert.eps_target;
  j["expected_bound"] = cert.expected_bound;
  j["beta"] = cert.beta;
  if (cert.beta_dist)
    j["beta_dist"] = {cert.beta_dist->first, cert.beta_dist->second};
  else
    j["beta_dist"] = nullptr;
  j["assumptions_convex"] = cert.assumptions_convex;
  j["adaptive_penalty_grid"] = cert.adaptive_penalty_grid;
  return j;
}

Certificate certificate_from_json(const json& j) {
  reject_unknown_keys(j,
                      {"method", "eps_target", "expected_bound", "beta",
                       "beta_dist", "assumptions_convex", "adaptive_penalty_grid"},
                      "certificate");
  Certificate cert;
  cert.method = j.at("method").get<std::string>();
  cert.eps_target = j.at("eps_target").get<double>();
  cert.expected_bound = j.at("expected_bound").get<double>();
  cert.beta = j.at("beta").get<double>();
  const auto& bd = j.at("beta_dist");
  if (!bd.is_null()) {
    if (!bd.is_array() || bd.size() != 2)
      throw SchemaMismatch("certificate beta_dist must be [a, b] or null");
    cert.beta_dist = {bd[0].get<double>(), bd[1].get<double>()};
  }
  cert.assumptions_convex = j.at("assumptions_convex").get<bool>();
  cert.adaptive_penalty_grid = j.at("adaptive_penalty_grid").get<bool>();
  return cert;
}

}  // namespace

ModelRecord record_from_model(const CalibratedModel& model) {
  ModelRecord rec;
  const auto [kind, components] = family_kind_of(*model.set.family);
  rec.family_kind = kind;
  rec.n_y = model.set.family->n_y();
  rec.components = components;
  rec.q.assign(model.set.q.data(), model.set.q.data() + model.set.q.size());
  rec.method = model.method;
  rec.certificate = model.certificate;
  rec.n_cal = model.n_cal;
  rec.eps = model.eps;
  rec.seed = model.seed;
  if (model.rho >= 0) rec.rho = model.rho;
  if (model.n_eval >= 0) {
    rec.phi = model.phi;
    rec.d = model.d;
    rec.n_eval = model.n_eval;
  }
  return rec;
}

CalibratedModel model_from_record(const ModelRecord& rec) {
  CalibratedModel model;
  FamilyKind kind;
  if (rec.family_kind == "sphere")
    kind = FamilyKind::Sphere;
  else if (rec.family_kind == "interval")
    kind = FamilyKind::Interval;
  else if (rec.family_kind == "ellipsoid")
    kind = FamilyKind::Ellipsoid;
  else if (rec.family_kind == "union")
    kind = FamilyKind::UnionEllipsoid;
  else if (rec.family_kind == "rbf")
    kind = FamilyKind::Rbf;
  else
    throw SchemaMismatch("unknown family kind '" + rec.family_kind + "'");
  model.set.family = make_family(kind, rec.n_y, rec.components);
  if (static_cast<int>(rec.q.size()) != model.set.family->n_q())
    throw SchemaMismatch("model has " + std::to_string(rec.q.size()) +
                         " parameters, family needs " +
                         std::to_string(model.set.family->n_q()));
  model.set.q = Eigen::Map<const Vec>(rec.q.data(), rec.q.size());
  model.method = rec.method;
  model.certificate = rec.certificate;
  model.n_cal = rec.n_cal;
  model.eps = rec.eps;
  model.seed = rec.seed;
  if (rec.rho) model.rho = *rec.rho;
  if (rec.n_eval) {
    model.phi = rec.phi.value_or(0.0);
    model.d = rec.d.value_or(-1);
    model.n_eval = *rec.n_eval;
  }
  return model;
}

void save_model(const ModelRecord& rec, const std::string& path) {
  json j;
  j["schema_version"] = rec.schema_version;
  j["family"] = {{"kind", rec.family_kind},
                 {"n_y", rec.n_y},
                 {"components", rec.components}};
  j["q"] = rec.q;
  j["method"] = rec.method;
  j["certificate"] = certificate_to_json(rec.certificate);
  json cal;
  cal["n_cal"] = rec.n_cal;
  cal["eps"] = rec.eps;
  cal["seed"] = rec.seed;
  if (rec.rho) cal["rho"] = *rec.rho;
  if (rec.phi) cal["phi"] = *rec.phi;
  if (rec.d) cal["d"] = *rec.d;
  if (rec.n_eval) cal["n_eval"] = *rec.n_eval;
  j["calibration"] = cal;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw ParseError("write failed: " + path);
}

ModelRecord load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model JSON: ") + e.what());
  }

  reject_unknown_keys(
      j, {"schema_version", "family", "q", "method", "certificate", "calibration"},
      "model");
  for (const char* key : {"schema_version", "family", "q", "method",
                          "certificate", "calibration"})
    if (!j.contains(key))
      throw SchemaMismatch(std::string("model is missing '") + key + "'");

  ModelRecord rec;
  try {
  rec.schema_version = j.at("schema_version").get<int>();
  if (rec.schema_version != kSchemaVersion)
    throw SchemaMismatch("model has schema_version " +
                         std::to_string(rec.schema_version) +
                         ", this build reads version " +
                         std::to_string(kSchemaVersion));

  const json& fam = j.at("family");
  reject_unknown_keys(fam, {"kind", "n_y", "components"}, "family");
  rec.family_kind = fam.at("kind").get<std::string>();
  rec.n_y = fam.at("n_y").get<int>();
  rec.components = fam.value("components", 1);

  rec.q = j.at("q").get<std::vector<double>>();
  rec.method = j.at("method").get<std::string>();
  rec.certificate = certificate_from_json(j.at("certificate"));

  const json& cal = j.at("calibration");
  reject_unknown_keys(cal, {"n_cal", "eps", "seed", "rho", "phi", "d", "n_eval"},
                      "calibration");
  rec.n_cal = cal.at("n_cal").get<long>();
  rec.eps = cal.at("eps").get<double>();
  rec.seed = cal.at("seed").get<std::uint64_t>();
  if (cal.contains("rho")) rec.rho = cal.at("rho").get<long>();
  if (cal.contains("phi")) rec.phi = cal.at("phi").get<double>();
  if (cal.contains("d")) rec.d = cal.at("d").get<long>();
  if (cal.contains("n_eval")) rec.n_eval = cal.at("n_eval").get<long>();
  } catch (const SchemaMismatch&) {
    throw;
  } catch (const json::exception& e) {
    throw SchemaMismatch(std::string("model JSON: ") + e.what());
  }
  return rec;
}

}  // namespace mvcp
