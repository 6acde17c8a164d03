#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbn.h"

namespace {

const std::string kTmp = "/tmp/cbn_capi_test";

struct TmpDir {
  TmpDir() { std::filesystem::create_directories(kTmp); }
  ~TmpDir() { std::filesystem::remove_all(kTmp); }
};

// Wraps a char* out-parameter so every test frees through the library.
struct OwnedString {
  char* p = nullptr;
  ~OwnedString() { cbn_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

struct ModelGuard {
  cbn_model* m = nullptr;
  ~ModelGuard() { cbn_model_free(m); }
};

cbn_model* make_identity(int n, int channels, int depth, double beta = 0.5,
                         double bound = 2.0) {
  ModelGuard g;
  const int dims[1] = {n};
  REQUIRE(cbn_identity_model(dims, 1, "blend_avg3", beta, channels, depth, bound, &g.m) ==
          CBN_OK);
  cbn_model* out = g.m;
  g.m = nullptr;
  return out;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  REQUIRE(cbn_version() != nullptr);
  CHECK(std::string(cbn_version()) == "1.0.0");
  REQUIRE(cbn_last_error() != nullptr);
}

TEST_CASE("identity models report their structure and cost") {
  ModelGuard g;
  g.m = make_identity(8, 3, 5);
  OwnedString info;
  REQUIRE(cbn_model_info(g.m, &info.p) == CBN_OK);
  auto j = nlohmann::json::parse(info.str());
  CHECK(j["dims"] == nlohmann::json::array({8}));
  CHECK(j["depth"] == 5);
  CHECK(j["widths"].size() == 6);
  CHECK(j["pooling"]["kind"] == "blend_avg3");
  CHECK(j["pooling"]["beta"] == 0.5);
  // Weight cost depth * channels * M_bar, plus the shift biases 2 n c K^2
  // that keep the ReLUs linear on [-K, K].
  const double m_bar = j["pooling"]["m_bar"].get<double>();
  CHECK(j["theta_sq"].get<double>() ==
        doctest::Approx(5 * 3 * m_bar + 2 * 8 * 3 * 2.0 * 2.0).epsilon(1e-12));
}

TEST_CASE("identity models evaluate to the identity on bounded inputs") {
  ModelGuard g;
  g.m = make_identity(8, 2, 4, 0.5, 2.0);
  std::vector<double> x(16), y(16, -7.0);
  for (int i = 0; i < 16; ++i) x[i] = std::sin(0.7 * i) * 1.5;  // within the bound 2
  REQUIRE(cbn_model_eval(g.m, x.data(), x.size(), y.data(), y.size()) == CBN_OK);
  for (int i = 0; i < 16; ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-10));
  CHECK(cbn_model_eval(g.m, x.data(), 15, y.data(), y.size()) == CBN_EINVAL);
  CHECK(cbn_model_eval(g.m, x.data(), x.size(), y.data(), 3) == CBN_EINVAL);
  CHECK(std::string(cbn_last_error()).find("length") != std::string::npos);
}

TEST_CASE("models survive a save/load round trip through files") {
  TmpDir tmp;
  ModelGuard a;
  a.m = make_identity(6, 2, 3);
  const std::string path = kTmp + "/model.cbn";
  REQUIRE(cbn_model_save(a.m, path.c_str()) == CBN_OK);
  ModelGuard b;
  REQUIRE(cbn_model_load(path.c_str(), &b.m) == CBN_OK);
  OwnedString ia, ib, sa, sb;
  REQUIRE(cbn_model_info(a.m, &ia.p) == CBN_OK);
  REQUIRE(cbn_model_info(b.m, &ib.p) == CBN_OK);
  CHECK(ia.str() == ib.str());
  REQUIRE(cbn_model_spectrum_csv(a.m, &sa.p) == CBN_OK);
  REQUIRE(cbn_model_spectrum_csv(b.m, &sb.p) == CBN_OK);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("layer,", 0) == 0);
}

TEST_CASE("file errors map to the documented status codes") {
  ModelGuard g;
  CHECK(cbn_model_load("/tmp/cbn_missing_model.cbn", &g.m) == CBN_EINVAL);
  CHECK(std::string(cbn_last_error()).find("cannot open") != std::string::npos);
  g.m = make_identity(4, 1, 2);
  CHECK(cbn_model_save(g.m, "/tmp/cbn_no_such_dir/x.cbn") == CBN_EFAIL);
}

TEST_CASE("null arguments are rejected with CBN_EINVAL") {
  ModelGuard g;
  g.m = make_identity(4, 1, 2);
  double x[4] = {0, 0, 0, 0};
  char* s = nullptr;
  int failures = 0;
  size_t len = 0;
  CHECK(cbn_model_load(nullptr, &g.m) == CBN_EINVAL);
  CHECK(cbn_model_save(nullptr, "p") == CBN_EINVAL);
  CHECK(cbn_model_info(g.m, nullptr) == CBN_EINVAL);
  CHECK(cbn_model_spectrum_csv(nullptr, &s) == CBN_EINVAL);
  CHECK(cbn_model_bounds_json(nullptr, &s) == CBN_EINVAL);
  CHECK(cbn_model_eval(g.m, nullptr, 4, x, 4) == CBN_EINVAL);
  CHECK(cbn_resample(nullptr, 1, 1, nullptr, 2, 0, nullptr, &len) == CBN_EINVAL);
  CHECK(cbn_run_experiment(nullptr, "d", nullptr) == CBN_EINVAL);
  CHECK(cbn_dataset_generate(nullptr, "d") == CBN_EINVAL);
  CHECK(cbn_selfcheck(1, nullptr, nullptr) == CBN_EINVAL);
  CHECK(std::string(cbn_last_error()).find("null") != std::string::npos);
  cbn_model_free(nullptr);  // must be a no-op
}

TEST_CASE("bounds reports parse and carry the rank sections") {
  ModelGuard g;
  g.m = make_identity(8, 2, 4);
  OwnedString out;
  REQUIRE(cbn_model_bounds_json(g.m, &out.p) == CBN_OK);
  auto j = nlohmann::json::parse(out.str());
  CHECK(j["tau_rank"] == 1e-6);
  CHECK(j["depth"] == 4);
  REQUIRE(j.contains("rank_lower_bounds"));
  OwnedString info;
  REQUIRE(cbn_model_info(g.m, &info.p) == CBN_OK);
  const double m_bar = nlohmann::json::parse(info.str())["pooling"]["m_bar"].get<double>();
  CHECK(j["rank_lower_bounds"]["constant"]["value"].get<double>() ==
        doctest::Approx(2 * m_bar).epsilon(1e-9));
}

TEST_CASE("resampling down then up restores band-limited data") {
  const int dims[1] = {8};
  // Constant plus the lowest harmonic: visible on the 4-ring, so subsampling
  // keeps everything recoverable.
  std::vector<double> x(8);
  for (int i = 0; i < 8; ++i) x[i] = 1.0 + std::cos(2.0 * std::acos(-1.0) * i / 8.0);
  double* small = nullptr;
  size_t small_len = 0;
  REQUIRE(cbn_resample(dims, 1, 1, x.data(), 2, 0, &small, &small_len) == CBN_OK);
  REQUIRE(small_len == 4);
  const int small_dims[1] = {4};
  double* back = nullptr;
  size_t back_len = 0;
  REQUIRE(cbn_resample(small_dims, 1, 1, small, 2, 1, &back, &back_len) == CBN_OK);
  REQUIRE(back_len == 8);
  for (int i = 0; i < 8; ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-10));
  std::free(small);
  std::free(back);
  // A stride that does not divide the grid is rejected.
  double* bad = nullptr;
  size_t bad_len = 0;
  CHECK(cbn_resample(dims, 1, 1, x.data(), 3, 0, &bad, &bad_len) == CBN_EINVAL);
}

TEST_CASE("experiments run end to end through the C interface") {
  TmpDir tmp;
  const std::string cfg =
      R"({"task":"autoencode_bumps_1d","n":16,"L":3,"channels":4,"seed":1,
          "steps":40,"eta":0.02,"lambda":1e-4,"count":16,"log_every":20})";
  const std::string dir = kTmp + "/run";
  OwnedString manifest;
  REQUIRE(cbn_run_experiment(cfg.c_str(), dir.c_str(), &manifest.p) == CBN_OK);
  auto j = nlohmann::json::parse(manifest.str());
  CHECK(j["status"] == "ok");
  CHECK(j["task"] == "autoencode_bumps_1d");
  ModelGuard g;
  REQUIRE(cbn_model_load((dir + "/model.cbn").c_str(), &g.m) == CBN_OK);
  OwnedString info;
  REQUIRE(cbn_model_info(g.m, &info.p) == CBN_OK);
  CHECK(nlohmann::json::parse(info.str())["depth"] == 3);

  CHECK(cbn_run_experiment("{bad json", (kTmp + "/x").c_str(), nullptr) == CBN_EINVAL);
  CHECK(std::string(cbn_last_error()).find("config") != std::string::npos);
}

TEST_CASE("dataset generation writes CSV artifacts for synthetic tasks") {
  TmpDir tmp;
  const std::string cfg =
      R"({"task":"autoencode_bumps_1d","n":12,"L":2,"count":6,"bump_width":3,"seed":2})";
  const std::string dir = kTmp + "/data";
  REQUIRE(cbn_dataset_generate(cfg.c_str(), dir.c_str()) == CBN_OK);
  for (const char* name : {"inputs.csv", "targets.csv", "labels.csv", "params.json"})
    CHECK(std::filesystem::exists(dir + "/" + name));
  std::ifstream in(dir + "/inputs.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("sample,v0,v1,", 0) == 0);
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);

  const std::string mnist_cfg = R"({"task":"mnist_classify","n":[13,13],"L":2})";
  CHECK(cbn_dataset_generate(mnist_cfg.c_str(), (kTmp + "/d2").c_str()) == CBN_EINVAL);
  CHECK(std::string(cbn_last_error()).find("synthetic") != std::string::npos);
}

TEST_CASE("the fast invariant suite reports zero failures") {
  int failures = -1;
  OwnedString table;
  REQUIRE(cbn_selfcheck(1, &failures, &table.p) == CBN_OK);
  CHECK(failures == 0);
  CHECK(table.str().find("PASS") != std::string::npos);
  CHECK(table.str().find("FAIL") == std::string::npos);
}
