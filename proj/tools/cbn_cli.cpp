// Command line front end. Talks to the library through the C API only.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cbn.h"

namespace {

int die(int code) {
  std::cerr << "error: " << cbn_last_error() << "\n";
  return code;
}

bool slurp(const std::string& path, std::string* out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  *out = ss.str();
  return true;
}

bool spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) return false;
  out << text;
  return out.good();
}

// Emit to the file when given, stdout otherwise.
int emit(const std::string& path, char* text) {
  int rc = 0;
  if (path.empty()) {
    std::cout << text;
  } else if (!spit(path, text)) {
    std::cerr << "error: cannot write " << path << "\n";
    rc = CBN_EFAIL;
  }
  cbn_string_free(text);
  return rc;
}

struct ModelGuard {
  cbn_model* m = nullptr;
  ~ModelGuard() { cbn_model_free(m); }
};

// Headerless CSV, one row per pixel (flat grid order), one column per channel.
bool read_signal_csv(const std::string& path, std::vector<double>* values, int* columns) {
  std::ifstream in(path);
  if (!in) return false;
  std::string line;
  *columns = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    int cols = 0;
    while (std::getline(row, cell, ',')) {
      values->push_back(std::strtod(cell.c_str(), nullptr));
      ++cols;
    }
    if (*columns == 0) *columns = cols;
    if (cols != *columns) return false;
  }
  return *columns > 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cyclic CNN training, spectra, and representation-cost bounds"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a training experiment from a JSON config");
  std::string train_config, train_out = "run";
  bool train_quiet = false;
  train->add_option("--config", train_config, "config JSON file")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_flag("--quiet", train_quiet, "suppress the manifest echo");

  // spectrum
  auto* spectrum = app.add_subcommand("spectrum", "per-layer singular spectrum CSV");
  std::string spec_model, spec_out;
  spectrum->add_option("--model", spec_model, "checkpoint file")->required();
  spectrum->add_option("--out", spec_out, "CSV path (default stdout)");

  // bounds
  auto* bounds = app.add_subcommand("bounds", "representation-cost bound report JSON");
  std::string bounds_model, bounds_out;
  bounds->add_option("--model", bounds_model, "checkpoint file")->required();
  bounds->add_option("--out", bounds_out, "JSON path (default stdout)");

  // construct identity
  auto* construct = app.add_subcommand("construct", "build a network from a recipe");
  construct->require_subcommand(1);
  auto* identity = construct->add_subcommand("identity", "layers computing the identity map");
  int id_n = 8, id_n2 = 0, id_c = 1, id_depth = 1;
  double id_beta = 0.0, id_bound = 0.0;
  std::string id_pooling = "blend_avg3", id_out;
  identity->add_option("--n", id_n, "grid size (axis 0)");
  identity->add_option("--n2", id_n2, "axis 1 size for 2D grids");
  identity->add_option("--c", id_c, "channels");
  identity->add_option("--depth", id_depth, "layer count");
  identity->add_option("--pooling", id_pooling, "identity or blend_avg3");
  identity->add_option("--beta", id_beta, "blend weight");
  identity->add_option("--bound", id_bound, "input bound K for the ReLU shift");
  identity->add_option("--out", id_out, "checkpoint path")->required();

  // resample
  auto* resample = app.add_subcommand("resample", "integer-factor grid resampling of a signal");
  int rs_n = 0, rs_n2 = 0, rs_factor = 2;
  bool rs_up = false;
  std::string rs_in, rs_out;
  resample->add_option("--n", rs_n, "grid size (axis 0)")->required();
  resample->add_option("--n2", rs_n2, "axis 1 size for 2D grids");
  resample->add_option("--factor", rs_factor, "resampling factor per axis");
  resample->add_flag("--up", rs_up, "upsample instead of downsample");
  resample->add_option("--in", rs_in, "input CSV (pixel rows, channel columns)")->required();
  resample->add_option("--out", rs_out, "output CSV")->required();

  // verify
  auto* verify = app.add_subcommand("verify", "run the invariant suite");
  bool verify_fast = false;
  verify->add_flag("--fast", verify_fast, "smaller randomized instances");

  // data
  auto* data = app.add_subcommand("data", "generate a synthetic dataset");
  std::string data_config, data_out = "data";
  data->add_option("--config", data_config, "config JSON file")->required();
  data->add_option("--out", data_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : CBN_EINVAL;
  }

  if (train->parsed()) {
    std::string config;
    if (!slurp(train_config, &config)) {
      std::cerr << "error: cannot read " << train_config << "\n";
      return CBN_EINVAL;
    }
    char* manifest = nullptr;
    int rc = cbn_run_experiment(config.c_str(), train_out.c_str(), &manifest);
    if (rc != CBN_OK) return die(rc);
    if (!train_quiet && manifest) std::cout << manifest;
    cbn_string_free(manifest);
    return 0;
  }

  if (spectrum->parsed()) {
    ModelGuard g;
    int rc = cbn_model_load(spec_model.c_str(), &g.m);
    if (rc != CBN_OK) return die(rc);
    char* csv = nullptr;
    rc = cbn_model_spectrum_csv(g.m, &csv);
    if (rc != CBN_OK) return die(rc);
    return emit(spec_out, csv);
  }

  if (bounds->parsed()) {
    ModelGuard g;
    int rc = cbn_model_load(bounds_model.c_str(), &g.m);
    if (rc != CBN_OK) return die(rc);
    char* json = nullptr;
    rc = cbn_model_bounds_json(g.m, &json);
    if (rc != CBN_OK) return die(rc);
    return emit(bounds_out, json);
  }

  if (identity->parsed()) {
    int dims[2] = {id_n, id_n2};
    const int ndims = id_n2 > 0 ? 2 : 1;
    ModelGuard g;
    int rc = cbn_identity_model(dims, ndims, id_pooling.c_str(), id_beta, id_c, id_depth,
                                id_bound, &g.m);
    if (rc != CBN_OK) return die(rc);
    rc = cbn_model_save(g.m, id_out.c_str());
    if (rc != CBN_OK) return die(rc);
    char* info = nullptr;
    rc = cbn_model_info(g.m, &info);
    if (rc != CBN_OK) return die(rc);
    std::cout << info;
    cbn_string_free(info);
    return 0;
  }

  if (resample->parsed()) {
    std::vector<double> values;
    int channels = 0;
    if (!read_signal_csv(rs_in, &values, &channels)) {
      std::cerr << "error: cannot read signal CSV " << rs_in << "\n";
      return CBN_EINVAL;
    }
    int dims[2] = {rs_n, rs_n2};
    const int ndims = rs_n2 > 0 ? 2 : 1;
    const size_t n = static_cast<size_t>(rs_n) * (rs_n2 > 0 ? rs_n2 : 1);
    if (values.size() != n * channels) {
      std::cerr << "error: expected " << n << " pixel rows\n";
      return CBN_EINVAL;
    }
    // CSV rows are pixels; the API wants channel-blocked order.
    std::vector<double> blocked(values.size());
    for (size_t i = 0; i < n; ++i)
      for (int c = 0; c < channels; ++c) blocked[c * n + i] = values[i * channels + c];
    double* out = nullptr;
    size_t out_len = 0;
    int rc = cbn_resample(dims, ndims, channels, blocked.data(), rs_factor, rs_up ? 1 : 0, &out,
                          &out_len);
    if (rc != CBN_OK) return die(rc);
    const size_t n_out = out_len / channels;
    std::ostringstream os;
    os.precision(17);
    for (size_t i = 0; i < n_out; ++i) {
      for (int c = 0; c < channels; ++c) os << (c ? "," : "") << out[c * n_out + i];
      os << "\n";
    }
    std::free(out);
    if (!spit(rs_out, os.str())) {
      std::cerr << "error: cannot write " << rs_out << "\n";
      return CBN_EFAIL;
    }
    return 0;
  }

  if (verify->parsed()) {
    int failures = 0;
    char* table = nullptr;
    int rc = cbn_selfcheck(verify_fast ? 1 : 0, &failures, &table);
    if (rc != CBN_OK) return die(rc);
    std::cout << table;
    cbn_string_free(table);
    if (failures > 0) {
      std::cerr << failures << " check(s) failed\n";
      return CBN_EFAIL;
    }
    return 0;
  }

  if (data->parsed()) {
    std::string config;
    if (!slurp(data_config, &config)) {
      std::cerr << "error: cannot read " << data_config << "\n";
      return CBN_EINVAL;
    }
    int rc = cbn_dataset_generate(config.c_str(), data_out.c_str());
    if (rc != CBN_OK) return die(rc);
    return 0;
  }

  return CBN_EINVAL;
}
