#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mvcp/dataio.hpp"
#include "mvcp/remmcp.hpp"

using namespace mvcp;

namespace {

#ifndef MVCP_CLI_PATH
#error "MVCP_CLI_PATH must point at the mvcp binary"
#endif

struct CmdResult {
  int status = -1;
  std::string out;
};

CmdResult run(const std::string& args) {
  const std::string cmd = std::string(MVCP_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  CmdResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) res.out += buf.data();
  const int rc = pclose(pipe);
  res.status = WEXITSTATUS(rc);
  return res;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workdir {
  std::string dir;
  Workdir() {
    dir = "/tmp/mvcp_cli_XXXXXX";
    REQUIRE(mkdtemp(dir.data()) != nullptr);
  }
  ~Workdir() { std::filesystem::remove_all(dir); }
  std::string path(const std::string& name) const { return dir + "/" + name; }
};

}  // namespace

TEST_CASE("calibrate writes a model and a summary line") {
  Workdir wd;
  run("synth --preset gauss:2 --n 200 --seed 1 --output " + wd.path("cal.csv"));
  const auto res = run("calibrate --method remmcp --score ellipsoid --eps 0.1"
                       " --input " + wd.path("cal.csv") +
                       " --output " + wd.path("m.json"));
  CHECK(res.status == 0);
  CHECK(res.out.find("method=remmcp") != std::string::npos);
  CHECK(res.out.find("rho=") != std::string::npos);
  CHECK(std::filesystem::exists(wd.path("m.json")));
}

TEST_CASE("calibrate: infeasible outlier budget exits 2 quoting the budget") {
  Workdir wd;
  run("synth --preset gauss:2 --n 100 --seed 1 --output " + wd.path("cal.csv"));
  const auto res = run("calibrate --method remmcp --score ellipsoid"
                       " --eps 0.0001 --input " + wd.path("cal.csv") +
                       " --output " + wd.path("m.json"));
  CHECK(res.status == 2);
  CHECK(res.out.find("outlier budget") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(wd.path("m.json")));
}

TEST_CASE("calibrate: relmcp with an unreachable certificate exits 3") {
  Workdir wd;
  run("synth --preset gauss:1 --n 12 --seed 2 --output " + wd.path("cal.csv"));
  const auto res = run("calibrate --method relmcp --score sphere --eps 0.01"
                       " --beta 0.1 --input " + wd.path("cal.csv") +
                       " --output " + wd.path("m.json"));
  CHECK(res.status == 3);
  CHECK(res.out.find("no certified valid solution") != std::string::npos);
}

TEST_CASE("certify prints the removal certificate of a stored model") {
  Workdir wd;
  // build the record directly; certify only formats it
  CalibratedModel model;
  model.set.family = make_family(FamilyKind::Ellipsoid, 2);
  model.set.q = Vec::Ones(3);
  model.method = "remmcp";
  model.certificate = remmcp_certificate(2000, 3, 32, 0.05);
  model.n_cal = 2000;
  model.eps = 0.05;
  model.rho = 32;
  save_model(record_from_model(model), wd.path("m.json"));

  const auto res = run("certify --model " + wd.path("m.json"));
  CHECK(res.status == 0);
  // expected bound 99/2001 = 0.04947...
  CHECK(res.out.find("expected_bound=0.04947526236881559") != std::string::npos);
  CHECK(res.out.find("beta_dist=(1902,99)") != std::string::npos);

  const auto direct = run("certify --ncal 2000 --nq 3 --rho 32 --eps 0.05");
  CHECK(direct.status == 0);
  CHECK(direct.out == res.out);
}

TEST_CASE("predict marks the model's kept calibration points as members") {
  Workdir wd;
  run("synth --preset gauss:2 --n 60 --seed 3 --output " + wd.path("cal.csv"));
  run("calibrate --method remmcp --score interval --eps 0.2 --seed 4"
      " --input " + wd.path("cal.csv") + " --output " + wd.path("m.json"));

  const auto res = run("predict --model " + wd.path("m.json") + " --input " +
                       wd.path("cal.csv") + " --output " + wd.path("pred.csv"));
  CHECK(res.status == 0);

  // reconstruct the removed set; everything else must be inside
  const ResidualMatrix cal = read_residuals_csv(wd.path("cal.csv"));
  const auto family = make_family(FamilyKind::Interval, 2);
  const auto out = remmcp_calibrate(family, cal, 0.2, 4);
  std::vector<bool> removed(cal.rows(), false);
  for (int idx : out.model.removed) removed[idx] = true;

  std::ifstream in(wd.path("pred.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "r1,r2,member");
  int row = 0;
  int members = 0;
  while (std::getline(in, line)) {
    const bool member = line.back() == '1';
    if (!removed[row]) CHECK(member);
    members += member;
    ++row;
  }
  CHECK(row == 60);
  CHECK(members >= 60 - static_cast<int>(out.model.removed.size()));
}

TEST_CASE("evaluate prints coverage and appends a report row") {
  Workdir wd;
  run("synth --preset gauss:2 --n 150 --seed 5 --output " + wd.path("cal.csv"));
  run("synth --preset gauss:2 --n 400 --seed 6 --output " + wd.path("test.csv"));
  run("calibrate --method scp1 --eps 0.1 --input " + wd.path("cal.csv") +
      " --output " + wd.path("m.json"));
  const auto res = run("evaluate --model " + wd.path("m.json") + " --test " +
                       wd.path("test.csv") + " --cal " + wd.path("cal.csv") +
                       " --mc-samples 5000 --seed 7 --no-timing --report " +
                       wd.path("rep.csv"));
  CHECK(res.status == 0);
  CHECK(res.out.find("coverage=") != std::string::npos);
  CHECK(res.out.find("volume=") != std::string::npos);

  const std::string report = slurp(wd.path("rep.csv"));
  CHECK(report.find("run_id,method,seed,n_cal,eps,coverage,volume,"
                    "volume_stderr,time_ms") == 0);
  CHECK(report.find("scp1") != std::string::npos);
}

TEST_CASE("every subcommand is byte-deterministic under a fixed seed") {
  Workdir a, b;
  auto flow = [&](const Workdir& wd) {
    run("synth --preset trimodal --n 120 --seed 9 --output " + wd.path("cal.csv"));
    run("synth --preset trimodal --n 200 --seed 10 --output " +
        wd.path("test.csv"));
    run("calibrate --method remmcp --score interval --eps 0.2 --seed 11"
        " --input " + wd.path("cal.csv") + " --output " + wd.path("m.json"));
    run("predict --model " + wd.path("m.json") + " --input " +
        wd.path("test.csv") + " --output " + wd.path("pred.csv"));
    return run("evaluate --model " + wd.path("m.json") + " --test " +
               wd.path("test.csv") + " --cal " + wd.path("cal.csv") +
               " --mc-samples 4000 --seed 12 --no-timing --report " +
               wd.path("rep.csv"))
        .out;
  };
  const std::string out_a = flow(a);
  const std::string out_b = flow(b);
  CHECK(out_a == out_b);
  for (const char* f : {"cal.csv", "test.csv", "m.json", "pred.csv", "rep.csv"})
    CHECK(slurp(a.path(f)) == slurp(b.path(f)));
}

TEST_CASE("experiment: config-driven sweep with deterministic outputs") {
  Workdir wd;
  {
    std::ofstream cfg(wd.path("exp.json"));
    cfg << R"({
      "methods": [
        {"method": "scp1"},
        {"method": "remmcp", "score": "interval", "name": "rem-interval"}
      ],
      "generator": {"kind": "gaussian", "n_y": 2, "cov_diag": [1.0, 1.0]},
      "n_runs": 2, "n_cal": 80, "n_test": 150,
      "eps": 0.2, "beta": 0.2, "mc_samples": 2000, "base_seed": 21
    })";
  }
  const auto res =
      run("experiment --config " + wd.path("exp.json") + " --output-dir " +
          wd.path("out") + " --no-timing");
  CHECK(res.status == 0);
  CHECK(std::filesystem::exists(wd.path("out/report.csv")));
  CHECK(std::filesystem::exists(wd.path("out/beta_scp1.csv")));
  CHECK(std::filesystem::exists(wd.path("out/beta_rem-interval.csv")));

  const std::string first = slurp(wd.path("out/report.csv"));
  const auto res2 =
      run("experiment --config " + wd.path("exp.json") + " --output-dir " +
          wd.path("out2") + " --no-timing --workers 2");
  CHECK(res2.status == 0);
  CHECK(slurp(wd.path("out2/report.csv")) == first);
}

TEST_CASE("bad inputs map to the documented exit codes") {
  Workdir wd;
  CHECK(run("certify --model /nonexistent.json").status == 4);

  std::ofstream bad(wd.path("bad.csv"));
  bad << "r1,r2\n1.0\n";
  bad.close();
  const auto res = run("calibrate --method scp1 --eps 0.2 --input " +
                       wd.path("bad.csv") + " --output " + wd.path("m.json"));
  CHECK(res.status == 4);
  CHECK(res.out.find("line") != std::string::npos);

  CHECK(run("frobnicate").status == 1);
}
