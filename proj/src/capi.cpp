#include "cbn.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "checkpoint.h"
#include "construct.h"
#include "datasets.h"
#include "experiment.h"
#include "selfcheck.h"

struct cbn_model {
  cbn::Network net;
};

namespace {

thread_local std::string g_error = "no error";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

int fail_code(const std::exception& e) {
  g_error = e.what();
  if (const auto* err = dynamic_cast<const cbn::Error*>(&e))
    return err->kind() == cbn::Error::invalid_argument ? CBN_EINVAL : CBN_EFAIL;
  return CBN_EFAIL;
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return fail_code(e);
  } catch (...) {
    g_error = "unknown error";
    return CBN_EFAIL;
  }
}

int einval(const char* msg) {
  g_error = msg;
  return CBN_EINVAL;
}

cbn::Ring ring_from(const int* dims, int ndims) {
  cbn::require(dims != nullptr && (ndims == 1 || ndims == 2),
               "dims must have one or two entries");
  std::vector<int> d(dims, dims + ndims);
  cbn::Ring ring{d};
  cbn::require(ring.valid(), "invalid grid dims");
  return ring;
}

}  // namespace

extern "C" {

const char* cbn_version(void) { return "1.0.0"; }

const char* cbn_last_error(void) { return g_error.c_str(); }

void cbn_string_free(char* s) { std::free(s); }

int cbn_model_load(const char* path, cbn_model** out) {
  if (!path || !out) return einval("cbn_model_load: null argument");
  return guarded([&] {
    auto* m = new cbn_model{cbn::load_checkpoint(path)};
    *out = m;
    return CBN_OK;
  });
}

int cbn_model_save(const cbn_model* model, const char* path) {
  if (!model || !path) return einval("cbn_model_save: null argument");
  return guarded([&] {
    cbn::save_checkpoint(model->net, path);
    return CBN_OK;
  });
}

void cbn_model_free(cbn_model* model) { delete model; }

int cbn_model_info(const cbn_model* model, char** json_out) {
  if (!model || !json_out) return einval("cbn_model_info: null argument");
  return guarded([&] {
    const cbn::Network& net = model->net;
    nlohmann::json j;
    j["dims"] = net.ring.dims;
    j["depth"] = net.depth();
    j["widths"] = net.widths();
    j["theta_sq"] = net.theta_sq();
    j["pooling"] = {{"kind", cbn::PoolingSpec::kind_name(net.pooling.kind)},
                    {"beta", net.pooling.beta},
                    {"m_bar", net.pooling.M_bar}};
    j["final_pool"] = net.final_pool;
    j["seed"] = net.seed;
    *json_out = dup_string(j.dump(2) + "\n");
    return CBN_OK;
  });
}

int cbn_identity_model(const int* dims, int ndims, const char* pooling_kind, double beta,
                       int channels, int depth, double input_bound, cbn_model** out) {
  if (!pooling_kind || !out) return einval("cbn_identity_model: null argument");
  return guarded([&] {
    cbn::Ring ring = ring_from(dims, ndims);
    cbn::PoolingSpec pool =
        cbn::pooling_operator(ring, cbn::PoolingSpec::kind_from_name(pooling_kind), beta);
    auto* m = new cbn_model{cbn::identity_network(ring, pool, channels, depth, input_bound)};
    *out = m;
    return CBN_OK;
  });
}

int cbn_model_spectrum_csv(const cbn_model* model, char** csv_out) {
  if (!model || !csv_out) return einval("cbn_model_spectrum_csv: null argument");
  return guarded([&] {
    auto rows = cbn::layer_spectrum_report(model->net);
    *csv_out = dup_string(cbn::spectrum_csv(model->net.ring, rows));
    return CBN_OK;
  });
}

int cbn_model_bounds_json(const cbn_model* model, char** json_out) {
  if (!model || !json_out) return einval("cbn_model_bounds_json: null argument");
  return guarded([&] {
    auto probes = cbn::constant_probe_grid(model->net.ring, model->net.c_in());
    *json_out = dup_string(cbn::bounds_report_json(model->net, probes));
    return CBN_OK;
  });
}

int cbn_model_eval(const cbn_model* model, const double* x, size_t x_len, double* y,
                   size_t y_len) {
  if (!model || !x || !y) return einval("cbn_model_eval: null argument");
  return guarded([&] {
    const cbn::Network& net = model->net;
    const size_t want_in = static_cast<size_t>(net.ring.n()) * net.c_in();
    const size_t want_out = static_cast<size_t>(net.ring.n()) * net.c_out();
    cbn::require(x_len == want_in, "cbn_model_eval: input length mismatch");
    cbn::require(y_len == want_out, "cbn_model_eval: output length mismatch");
    cbn::Signal xs = Eigen::Map<const cbn::Signal>(x, net.ring.n(), net.c_in());
    cbn::Signal ys = cbn::evaluate(net, xs);
    Eigen::Map<cbn::Signal>(y, ys.rows(), ys.cols()) = ys;
    return CBN_OK;
  });
}

int cbn_resample(const int* dims, int ndims, int channels, const double* data, int factor,
                 int direction_up, double** out, size_t* out_len) {
  if (!data || !out || !out_len) return einval("cbn_resample: null argument");
  return guarded([&] {
    cbn::Ring ring = ring_from(dims, ndims);
    cbn::require(channels >= 1, "cbn_resample: channels must be positive");
    cbn::Signal x = Eigen::Map<const cbn::Signal>(data, ring.n(), channels);
    cbn::Signal y = direction_up ? cbn::upsample(ring, x, factor)
                                 : cbn::downsample(ring, x, factor);
    const size_t len = static_cast<size_t>(y.size());
    double* buf = static_cast<double*>(std::malloc(len * sizeof(double)));
    if (!buf) cbn::fail_runtime("cbn_resample: allocation failed");
    Eigen::Map<cbn::Signal>(buf, y.rows(), y.cols()) = y;
    *out = buf;
    *out_len = len;
    return CBN_OK;
  });
}

int cbn_run_experiment(const char* config_json, const char* out_dir, char** manifest_json_out) {
  if (!config_json || !out_dir) return einval("cbn_run_experiment: null argument");
  return guarded([&] {
    cbn::ExperimentConfig cfg = cbn::config_from_json(config_json);
    cbn::run_experiment(cfg, out_dir);
    if (manifest_json_out) {
      std::ifstream in(std::filesystem::path(out_dir) / "manifest.json", std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      *manifest_json_out = dup_string(ss.str());
    }
    return CBN_OK;
  });
}

int cbn_dataset_generate(const char* config_json, const char* out_dir) {
  if (!config_json || !out_dir) return einval("cbn_dataset_generate: null argument");
  return guarded([&] {
    cbn::ExperimentConfig cfg = cbn::config_from_json(config_json);
    cbn::Dataset data;
    if (cfg.task == "autoencode_bumps_1d") {
      data = cbn::gen_translated_bumps(cfg.count, cfg.ring(), cfg.bump_width, cfg.seed,
                                       cfg.bump_floor);
    } else if (cfg.task == "shape_pattern") {
      data = cbn::gen_shape_pattern(cfg.count, cfg.ring(), cfg.shape_max_freq, cfg.pattern_freq,
                                    cfg.seed);
    } else if (cfg.task == "ball_trajectory") {
      data = cbn::gen_ball_trajectory(cfg.count, cfg.ring(), cfg.frames_in, cfg.frames_out,
                                      cfg.gravity, cfg.seed);
    } else {
      cbn::fail_invalid("cbn_dataset_generate: task '" + cfg.task +
                        "' is not a synthetic generator");
    }
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto write_signals = [&](const char* name, const std::vector<cbn::Signal>& sig) {
      std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
      if (!f) cbn::fail_runtime(std::string("cannot write ") + name);
      f << "sample";
      if (!sig.empty())
        for (int i = 0; i < sig[0].size(); ++i) f << ",v" << i;
      f << "\n";
      f.precision(17);
      for (size_t s = 0; s < sig.size(); ++s) {
        f << s;
        const double* p = sig[s].data();
        for (int i = 0; i < sig[s].size(); ++i) f << "," << p[i];
        f << "\n";
      }
    };
    write_signals("inputs.csv", data.inputs);
    write_signals("targets.csv", data.targets);
    if (!data.labels.empty()) {
      std::ofstream f(fs::path(out_dir) / "labels.csv", std::ios::binary);
      f << "sample,label\n";
      for (size_t s = 0; s < data.labels.size(); ++s) f << s << "," << data.labels[s] << "\n";
    }
    std::ofstream pf(fs::path(out_dir) / "params.json", std::ios::binary);
    pf << data.params_json << "\n";
    return CBN_OK;
  });
}

int cbn_selfcheck(int fast, int* failures, char** table_out) {
  if (!failures) return einval("cbn_selfcheck: null argument");
  return guarded([&] {
    auto results = cbn::run_selfchecks(fast != 0);
    int bad = 0;
    std::ostringstream os;
    size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    for (const auto& r : results) {
      bad += r.pass ? 0 : 1;
      os << (r.pass ? "PASS  " : "FAIL  ") << r.name;
      for (size_t i = r.name.size(); i < width + 2; ++i) os << ' ';
      os << r.detail << "\n";
    }
    *failures = bad;
    if (table_out) *table_out = dup_string(os.str());
    return CBN_OK;
  });
}

}  // extern "C"
