#pragma once

#include "bounds.h"
#include "construct.h"
#include "datasets.h"

namespace cbn {

// JSON-configured training run. `dims` is the grid ({n} or {n1, n2});
// downsample_layers lists 1-based layer indices after which the activations
// are subsampled by 2 (the spectrum-truncating resampler, recorded in the
// manifest).
struct ExperimentConfig {
  std::string task;  // autoencode_bumps_1d | mnist_classify | mnist_zero_autoencode |
                     // shape_pattern | ball_trajectory
  std::vector<int> dims = {16};
  int L = 8;
  int channels = 16;
  PoolingSpec::Kind pooling_kind = PoolingSpec::blend_avg3;
  double beta = 0.25;
  double lambda = 1e-3;
  double eta = 0.05;
  int steps = 2000;
  uint64_t seed = 0;
  std::vector<int> downsample_layers;

  // plumbing with defaults
  int count = 256;
  int batch_size = 0;
  double momentum = 0.9;
  double sigma_init = 1.0;
  int log_every = 50;
  int bump_width = 5;
  double bump_floor = 0.0;
  std::string mnist_images;
  std::string mnist_labels;
  int mnist_downscale = 13;
  int mnist_limit = 2000;
  int frames_in = 4;
  int frames_out = 1;
  double gravity = 0.25;
  int shape_max_freq = 1;
  std::array<int, 2> pattern_freq = {5, 5};

  Ring ring() const { return Ring{dims}; }
  void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_canonical_json(const ExperimentConfig& cfg);
// FNV-1a over the canonical serialization.
std::string config_hash_hex(const ExperimentConfig& cfg);

// A chain of networks on successively smaller rings, joined by subsample-by-s
// stages. Every layer of a non-final segment is a hidden layer; the final
// segment's last layer is the linear output layer.
struct Pipeline {
  std::vector<Network> segments;
  std::vector<int> down_factors;  // one per junction, = segments.size() - 1

  int depth() const {
    int d = 0;
    for (const auto& s : segments) d += s.depth();
    return d;
  }
  double theta_sq() const {
    double t = 0.0;
    for (const auto& s : segments) t += s.theta_sq();
    return t;
  }
  bool single() const { return segments.size() == 1; }
  const Ring& in_ring() const { return segments.front().ring; }
  const Ring& out_ring() const { return segments.back().ring; }
  int c_in() const { return segments.front().c_in(); }
  int c_out() const { return segments.back().c_out(); }
  void validate() const;
};

// Widths c_in -> channels -> ... -> c_out over cfg.L layers, split into
// segments at cfg.downsample_layers; pooling is spectrum-truncated at each
// junction.
Pipeline build_pipeline(const ExperimentConfig& cfg, int c_in, int c_out);

Signal pipeline_evaluate(const Pipeline& pipe, const Signal& x);

std::vector<HistoryRow> pipeline_train(Pipeline& pipe, const Batch& data, const TrainConfig& cfg);

// Per-layer pooled-filter spectra with global layer numbering across segments.
std::string pipeline_spectrum_csv(const Pipeline& pipe);

// Constant signals spanning a small value grid, all in the constant-channel
// probe set.
std::vector<Signal> constant_probe_grid(const Ring& ring, int channels);
// Per-channel means of the first dataset inputs, as constant signals.
std::vector<Signal> dataset_mean_probes(const Dataset& data, int max_count);

// The full evaluable-bound report for one network at the given probes:
// rank lower bounds, the finite-depth correction bound, the weight-residual
// inequality, and the activation-norm inequality where their hypotheses hold
// (skips carry reasons).
std::string bounds_report_json(const Network& net, const std::vector<Signal>& probes);

struct ExperimentResult {
  ExperimentConfig cfg;
  Pipeline model;
  std::vector<HistoryRow> history;
  bool used_fallback = false;  // MNIST files absent, bump-parity stand-in used
  double final_loss = 0.0;
  double final_data_loss = 0.0;
  std::string out_dir;
};

// Trains per config and writes manifest.json, model checkpoint(s),
// history.csv, spectrum.csv and bounds.json into out_dir. On failure a
// manifest with a failure marker is still written.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace cbn
