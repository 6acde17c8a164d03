#pragma once

#include <optional>

#include "common.h"

namespace cbn {

struct Dataset {
  Ring ring;
  int channels = 1;
  std::vector<Signal> inputs;
  std::vector<Signal> targets;  // autoencoding / next-frame targets; may be empty
  std::vector<int> labels;      // class labels (or generator positions); may be empty
  std::string source;
  std::string params_json;  // generator parameters, serialized

  size_t size() const { return inputs.size(); }
  void validate() const;
};

// IDX image/label pair loader. Pixels are scaled to [0, 1]; filter_digit keeps
// only one class; downscale_to area-averages the square images to the given
// side length.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       int filter_digit = -1, int downscale_to = 0);

// Area-average resampling of a single square image, values stay in range.
MatrixXd downscale_area_average(const MatrixXd& img, int out_side);

// Low-frequency nonnegative shape times a single-frequency sinusoid with
// random phase; autoencoding targets equal the inputs. pattern_freq is
// per-axis (second entry ignored on 1D rings).
Dataset gen_shape_pattern(int count, const Ring& ring, int shape_max_freq,
                          std::array<int, 2> pattern_freq, uint64_t seed);

// Frames of a dot moving under constant acceleration on the cyclic grid,
// frames stacked as channels: inputs hold frames 0..frames_in-1, targets the
// following frames_out frames.
Dataset gen_ball_trajectory(int count, const Ring& ring, int frames_in, int frames_out,
                            double gravity, uint64_t seed);

// Continuous dot position after t steps.
std::array<double, 2> ball_position(const std::array<double, 2>& p0,
                                    const std::array<double, 2>& v, double gravity, int t);
// Bilinear splat of a unit dot at a continuous position.
VectorXd render_dot(const Ring& ring, const std::array<double, 2>& pos);

// Smooth bump (width pixels, raised-cosine profile) at a random position with
// amplitude jittered in [0.5, 1.5] so no two samples are shifts of each other.
// labels hold the bump positions; floor adds a constant offset (use a positive
// floor when strictly positive samples are needed). 1D rings.
Dataset gen_translated_bumps(int count, const Ring& ring, int width, uint64_t seed,
                             double floor = 0.0);

}  // namespace cbn
