#include "datasets.h"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fourier.h"

namespace cbn {

using nlohmann::json;

void Dataset::validate() const {
  require(!inputs.empty(), "dataset: empty");
  require(ring.valid(), "dataset: invalid ring");
  for (const auto& x : inputs)
    require(x.rows() == ring.n() && x.cols() == channels, "dataset: input shape mismatch");
  if (!targets.empty())
    require(targets.size() == inputs.size(), "dataset: target count mismatch");
  if (!labels.empty()) require(labels.size() == inputs.size(), "dataset: label count mismatch");
}

namespace {

uint32_t read_u32_be(std::istream& in, const std::string& what) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail_invalid("truncated IDX file while reading " + what);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

}  // namespace

MatrixXd downscale_area_average(const MatrixXd& img, int out_side) {
  require(out_side >= 1, "downscale: target side must be positive");
  require(img.rows() == img.cols(), "downscale: square images only");
  const int in_side = static_cast<int>(img.rows());
  if (out_side == in_side) return img;
  const double r = static_cast<double>(in_side) / out_side;
  MatrixXd out(out_side, out_side);
  for (int i = 0; i < out_side; ++i) {
    const double y0 = i * r, y1 = (i + 1) * r;
    for (int j = 0; j < out_side; ++j) {
      const double x0 = j * r, x1 = (j + 1) * r;
      double acc = 0.0;
      for (int p = static_cast<int>(std::floor(y0)); p < static_cast<int>(std::ceil(y1)); ++p) {
        const double wy = std::min<double>(p + 1, y1) - std::max<double>(p, y0);
        if (wy <= 0) continue;
        for (int q = static_cast<int>(std::floor(x0)); q < static_cast<int>(std::ceil(x1)); ++q) {
          const double wx = std::min<double>(q + 1, x1) - std::max<double>(q, x0);
          if (wx <= 0) continue;
          acc += wy * wx * img(p, q);
        }
      }
      out(i, j) = acc / (r * r);
    }
  }
  return out;
}

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path,
                       int filter_digit, int downscale_to) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) fail_invalid("cannot open image file " + images_path);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) fail_invalid("cannot open label file " + labels_path);

  if (read_u32_be(imgs, "image magic") != 0x00000803u)
    fail_invalid("image file magic mismatch (want 0x00000803)");
  const uint32_t count = read_u32_be(imgs, "image count");
  const uint32_t rows = read_u32_be(imgs, "row count");
  const uint32_t cols = read_u32_be(imgs, "column count");
  if (read_u32_be(labs, "label magic") != 0x00000801u)
    fail_invalid("label file magic mismatch (want 0x00000801)");
  const uint32_t label_count = read_u32_be(labs, "label count");
  if (label_count != count) fail_invalid("image/label count mismatch");
  require(rows == cols, "only square images are supported");

  const int side = downscale_to > 0 ? downscale_to : static_cast<int>(rows);
  Dataset ds;
  ds.ring = Ring::d2(side, side);
  ds.channels = 1;
  ds.source = "mnist_idx";
  ds.params_json = json{{"images", images_path},
                        {"labels", labels_path},
                        {"filter_digit", filter_digit},
                        {"downscale_to", downscale_to}}
                       .dump();

  std::vector<uint8_t> buf(rows * cols);
  for (uint32_t i = 0; i < count; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!imgs) fail_invalid("truncated IDX image data");
    char lab_c;
    labs.read(&lab_c, 1);
    if (!labs) fail_invalid("truncated IDX label data");
    const int lab = static_cast<uint8_t>(lab_c);
    if (filter_digit >= 0 && lab != filter_digit) continue;
    MatrixXd img(rows, cols);
    for (uint32_t p = 0; p < rows; ++p)
      for (uint32_t q = 0; q < cols; ++q) img(p, q) = buf[p * cols + q] / 255.0;
    if (downscale_to > 0) img = downscale_area_average(img, downscale_to);
    Signal x(side * side, 1);
    for (int p = 0; p < side; ++p)
      for (int q = 0; q < side; ++q) x(p * side + q, 0) = img(p, q);
    ds.inputs.push_back(std::move(x));
    ds.labels.push_back(lab);
  }
  if (ds.inputs.empty()) fail_invalid("no samples left after filtering");
  ds.validate();
  return ds;
}

Dataset gen_shape_pattern(int count, const Ring& ring, int shape_max_freq,
                          std::array<int, 2> pattern_freq, uint64_t seed) {
  require(count >= 1, "gen_shape_pattern: count must be positive");
  require(ring.valid(), "gen_shape_pattern: invalid ring");
  require(shape_max_freq >= 0, "gen_shape_pattern: negative shape frequency");
  for (int a = 0; a < ring.axes(); ++a)
    require(std::abs(pattern_freq[a]) * 2 <= ring.dims[a],
            "gen_shape_pattern: pattern frequency beyond Nyquist");
  const int n = ring.n();
  const double two_pi = 2.0 * std::acos(-1.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Dataset ds;
  ds.ring = ring;
  ds.channels = 1;
  ds.source = "shape_pattern";
  ds.params_json = json{{"count", count},
                        {"dims", ring.dims},
                        {"shape_max_freq", shape_max_freq},
                        {"pattern_freq", {pattern_freq[0], pattern_freq[1]}},
                        {"seed", seed}}
                       .dump();

  // Axis frequencies within the shape band, in canonical signed form.
  auto in_band = [&](int t, int dim) {
    const int signed_t = 2 * t <= dim ? t : t - dim;
    return std::abs(signed_t) <= shape_max_freq;
  };

  for (int i = 0; i < count; ++i) {
    VectorXcd shat = VectorXcd::Zero(n);
    for (int t = 0; t < n; ++t) {
      auto tc = ring.coords(t);
      if (!in_band(tc[0], ring.dims[0])) continue;
      if (ring.axes() == 2 && !in_band(tc[1], ring.dims[1])) continue;
      const int partner = ring.negate(t);
      if (partner < t) continue;  // fill conjugate pairs once
      if (partner == t) {
        shat(t) = gauss(rng);
      } else {
        const cplx v(gauss(rng), gauss(rng));
        shat(t) = v;
        shat(partner) = std::conj(v);
      }
    }
    VectorXd shape = fourier::synthesis(ring, shat).real();
    shape = (shape.array() - shape.minCoeff() + 0.5).matrix();

    const double phase = two_pi * unif(rng);
    Signal x(n, 1);
    for (int p = 0; p < n; ++p) {
      auto pc = ring.coords(p);
      double arg = two_pi * pattern_freq[0] * pc[0] / ring.dims[0] + phase;
      if (ring.axes() == 2) arg += two_pi * pattern_freq[1] * pc[1] / ring.dims[1];
      x(p, 0) = shape(p) * std::cos(arg);
    }
    ds.inputs.push_back(x);
    ds.targets.push_back(x);
  }
  ds.validate();
  return ds;
}

std::array<double, 2> ball_position(const std::array<double, 2>& p0,
                                    const std::array<double, 2>& v, double gravity, int t) {
  return {p0[0] + v[0] * t + 0.5 * gravity * t * t, p0[1] + v[1] * t};
}

VectorXd render_dot(const Ring& ring, const std::array<double, 2>& pos) {
  VectorXd out = VectorXd::Zero(ring.n());
  auto wrap = [](double x, int dim) {
    double r = std::fmod(x, dim);
    return r < 0 ? r + dim : r;
  };
  const double y = wrap(pos[0], ring.dims[0]);
  const int i0 = static_cast<int>(std::floor(y));
  const double fy = y - i0;
  if (ring.axes() == 1) {
    out(i0 % ring.dims[0]) += 1.0 - fy;
    out((i0 + 1) % ring.dims[0]) += fy;
    return out;
  }
  const double x = wrap(pos[1], ring.dims[1]);
  const int j0 = static_cast<int>(std::floor(x));
  const double fx = x - j0;
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj) {
      const double w = (di ? fy : 1.0 - fy) * (dj ? fx : 1.0 - fx);
      out(ring.flat((i0 + di) % ring.dims[0], (j0 + dj) % ring.dims[1])) += w;
    }
  return out;
}

Dataset gen_ball_trajectory(int count, const Ring& ring, int frames_in, int frames_out,
                            double gravity, uint64_t seed) {
  require(count >= 1, "gen_ball_trajectory: count must be positive");
  require(ring.valid(), "gen_ball_trajectory: invalid ring");
  require(frames_in >= 1 && frames_out >= 1, "gen_ball_trajectory: need frames on both sides");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> upos0(0.0, ring.dims[0]);
  std::uniform_real_distribution<double> upos1(0.0, ring.axes() == 2 ? ring.dims[1] : 1.0);
  std::uniform_real_distribution<double> uvel(-1.5, 1.5);

  Dataset ds;
  ds.ring = ring;
  ds.channels = frames_in;
  ds.source = "ball_trajectory";
  ds.params_json = json{{"count", count},
                        {"dims", ring.dims},
                        {"frames_in", frames_in},
                        {"frames_out", frames_out},
                        {"gravity", gravity},
                        {"seed", seed}}
                       .dump();

  for (int i = 0; i < count; ++i) {
    const std::array<double, 2> p0 = {upos0(rng), ring.axes() == 2 ? upos1(rng) : 0.0};
    const std::array<double, 2> v = {uvel(rng), ring.axes() == 2 ? uvel(rng) : 0.0};
    Signal in(ring.n(), frames_in), out(ring.n(), frames_out);
    for (int t = 0; t < frames_in; ++t)
      in.col(t) = render_dot(ring, ball_position(p0, v, gravity, t));
    for (int t = 0; t < frames_out; ++t)
      out.col(t) = render_dot(ring, ball_position(p0, v, gravity, frames_in + t));
    ds.inputs.push_back(std::move(in));
    ds.targets.push_back(std::move(out));
  }
  ds.validate();
  return ds;
}

Dataset gen_translated_bumps(int count, const Ring& ring, int width, uint64_t seed,
                             double floor) {
  require(count >= 1, "gen_translated_bumps: count must be positive");
  require(ring.valid() && ring.axes() == 1, "gen_translated_bumps: 1D rings only");
  const int n = ring.n();
  require(width >= 1 && width < n, "gen_translated_bumps: width must be in [1, n)");
  require(floor >= 0.0, "gen_translated_bumps: negative floor");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> upos(0, n - 1);
  std::uniform_real_distribution<double> uamp(0.5, 1.5);
  const double pi = std::acos(-1.0);

  VectorXd profile(width);
  for (int k = 0; k < width; ++k) {
    const double s = std::sin(pi * (k + 1) / (width + 1));
    profile(k) = s * s;
  }

  Dataset ds;
  ds.ring = ring;
  ds.channels = 1;
  ds.source = "translated_bumps";
  ds.params_json = json{{"count", count},
                        {"n", n},
                        {"width", width},
                        {"seed", seed},
                        {"floor", floor}}
                       .dump();

  for (int i = 0; i < count; ++i) {
    const int pos = upos(rng);
    const double amp = uamp(rng);
    Signal x = Signal::Constant(n, 1, floor);
    for (int k = 0; k < width; ++k) x((pos + k) % n, 0) += amp * profile(k);
    ds.inputs.push_back(x);
    ds.targets.push_back(x);
    ds.labels.push_back(pos);
  }
  ds.validate();
  return ds;
}

}  // namespace cbn
