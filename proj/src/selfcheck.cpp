#include "selfcheck.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bounds.h"
#include "checkpoint.h"
#include "construct.h"
#include "network.h"

namespace cbn {

namespace {

std::string fmt_err(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << "max err " << v;
  return os.str();
}

ConvFilter random_filter(const Ring& ring, int c_out, int c_in, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  ConvFilter f = zero_filter(ring, c_out, c_in);
  for (auto& tap : f.taps)
    for (int r = 0; r < tap.rows(); ++r)
      for (int c = 0; c < tap.cols(); ++c) tap(r, c) = g(rng);
  for (int k = 0; k < c_out; ++k) f.bias(k) = g(rng);
  return f;
}

Signal random_signal(const Ring& ring, int channels, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Signal x(ring.n(), channels);
  for (int i = 0; i < x.rows(); ++i)
    for (int c = 0; c < channels; ++c) x(i, c) = g(rng);
  return x;
}

CheckResult check_transform_oracle(bool fast) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  std::vector<Ring> rings = {Ring::d1(8), Ring::d1(12), Ring::d2(4, 8), Ring::d2(6, 5)};
  const int reps = fast ? 2 : 8;
  for (const Ring& ring : rings)
    for (int r = 0; r < reps; ++r) {
      VectorXcd x(ring.n());
      for (int i = 0; i < x.size(); ++i) x(i) = cplx(g(rng), g(rng));
      for (int sign : {-1, +1}) {
        VectorXcd a = fourier::transform(ring, x, sign);
        VectorXcd b = fourier::transform_direct(ring, x, sign);
        worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
      }
      VectorXcd back = fourier::synthesis(ring, fourier::analysis(ring, x));
      worst = std::max(worst, (back - x).cwiseAbs().maxCoeff());
    }
  return {"transform_matches_direct_and_inverts", worst < 1e-10, fmt_err(worst)};
}

CheckResult check_convolution_theorem(bool fast) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  std::vector<Ring> rings = {Ring::d1(16), Ring::d2(4, 6)};
  const int reps = fast ? 2 : 10;
  for (const Ring& ring : rings)
    for (int r = 0; r < reps; ++r) {
      VectorXd a(ring.n()), b(ring.n());
      for (int i = 0; i < ring.n(); ++i) {
        a(i) = g(rng);
        b(i) = g(rng);
      }
      VectorXd conv = cyclic_conv(ring, a, b);
      VectorXcd lhs = fourier::analysis_real(ring, conv);
      VectorXcd rhs = fourier::circulant_eigenvalues(ring, a).cwiseProduct(
          fourier::analysis_real(ring, b));
      worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
    }
  return {"convolution_theorem", worst < 1e-10, fmt_err(worst)};
}

CheckResult check_te_structure(bool fast) {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  std::vector<Ring> rings = {Ring::d1(8), Ring::d2(3, 4)};
  const int reps = fast ? 2 : 6;
  for (const Ring& ring : rings)
    for (int r = 0; r < reps; ++r) {
      ConvFilter f = random_filter(ring, 3, 2, rng);
      Signal x = random_signal(ring, 2, rng);
      MatrixXd W = te_matrix(ring, f);
      Signal y = cross_channel_conv(ring, f, x);
      VectorXd lhs = W * Eigen::Map<const VectorXd>(x.data(), x.size());
      worst = std::max(worst,
                       (lhs - Eigen::Map<const VectorXd>(y.data(), y.size())).cwiseAbs().maxCoeff());
      double violation = 0.0;
      ConvFilter back = filter_from_te(ring, W, 3, 2, &violation);
      worst = std::max(worst, violation);
      for (int j = 0; j < ring.n(); ++j)
        worst = std::max(worst, (back.taps[j] - f.taps[j]).cwiseAbs().maxCoeff());
    }
  return {"te_matrix_reproduces_convolution", worst < 1e-10, fmt_err(worst)};
}

CheckResult check_frequency_svd(bool fast) {
  std::mt19937_64 rng(14);
  double worst = 0.0;
  const int reps = fast ? 5 : 40;
  for (int r = 0; r < reps; ++r) {
    Ring ring = (r % 2 == 0) ? Ring::d1(8) : Ring::d2(4, 4);
    ConvFilter f = random_filter(ring, 2 + r % 3, 1 + r % 2, rng);
    FreqSVD fs = frequency_svd(ring, f);
    std::vector<double> freq_vals;
    for (const auto& per_t : fs.s) freq_vals.insert(freq_vals.end(), per_t.begin(), per_t.end());
    Eigen::BDCSVD<MatrixXd> dense(te_matrix(ring, f));
    std::vector<double> dense_vals(dense.singularValues().data(),
                                   dense.singularValues().data() + dense.singularValues().size());
    std::sort(freq_vals.begin(), freq_vals.end());
    std::sort(dense_vals.begin(), dense_vals.end());
    if (freq_vals.size() != dense_vals.size()) return {"frequency_svd_matches_dense", false,
                                                       "multiset size mismatch"};
    for (size_t i = 0; i < freq_vals.size(); ++i)
      worst = std::max(worst, std::abs(freq_vals[i] - dense_vals[i]));
  }
  return {"frequency_svd_matches_dense", worst < 1e-9, fmt_err(worst)};
}

CheckResult check_rank_identity_pooling(bool fast) {
  std::mt19937_64 rng(15);
  const int reps = fast ? 10 : 100;
  for (int r = 0; r < reps; ++r) {
    Ring ring = (r % 2 == 0) ? Ring::d1(4 + r % 5) : Ring::d2(2 + r % 3, 3);
    ConvFilter f = random_filter(ring, 1 + r % 3, 1 + (r / 2) % 3, rng);
    PoolingSpec id = pooling_operator(ring, PoolingSpec::identity, 0.0);
    FreqSVD fs = frequency_svd(ring, f);
    double rm = rank_m(fs, id, kTauRank);
    MatrixXd W = te_matrix(ring, f);
    Eigen::BDCSVD<MatrixXd> dense(W);
    const double cut = kTauRank * dense.singularValues().maxCoeff();
    int dr = 0;
    for (int i = 0; i < dense.singularValues().size(); ++i)
      dr += dense.singularValues()(i) > cut ? 1 : 0;
    if (std::lround(rm) != dr)
      return {"rank_m_identity_pooling_equals_dense_rank", false,
              "mismatch " + std::to_string(rm) + " vs " + std::to_string(dr)};
  }
  return {"rank_m_identity_pooling_equals_dense_rank", true, "all instances agree"};
}

CheckResult check_identity_cost(bool) {
  double worst = 0.0;
  for (double beta : {0.25, 0.5}) {
    Ring ring = Ring::d1(8);
    PoolingSpec pool = pooling_operator(ring, PoolingSpec::blend_avg3, beta);
    const int c = 3, depth = 4;
    Network id = identity_network(ring, pool, c, depth, 0.0);
    worst = std::max(worst, std::abs(id.theta_sq() - depth * c * pool.M_bar));
    std::mt19937_64 rng(16);
    Signal x = random_signal(ring, c, rng).cwiseAbs();  // positive inputs, K = 0 shift unused
    Signal y = evaluate(id, x);
    worst = std::max(worst, (y - x).cwiseAbs().maxCoeff());
  }
  return {"identity_network_cost_and_function", worst < 1e-9, fmt_err(worst)};
}

CheckResult check_gradient(bool fast) {
  std::mt19937_64 rng(17);
  Ring ring = Ring::d1(4);
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::blend_avg3, 0.5);
  net.layers = {random_filter(ring, 2, 1, rng), random_filter(ring, 1, 2, rng)};
  Batch batch;
  for (int i = 0; i < 3; ++i) {
    batch.X.push_back(random_signal(ring, 1, rng));
    batch.Y.push_back(random_signal(ring, 1, rng));
  }
  std::vector<ConvFilter> grad;
  loss_and_gradients(net, batch, 1e-2, LossKind::mse, &grad);
  const double h = 1e-6;
  double worst = 0.0;
  const int stride = fast ? 3 : 1;
  int counter = 0;
  auto probe = [&](double* param, double g) {
    if (counter++ % stride != 0) return;
    const double keep = *param;
    *param = keep + h;
    double up = loss_and_gradients(net, batch, 1e-2, LossKind::mse, nullptr).total;
    *param = keep - h;
    double dn = loss_and_gradients(net, batch, 1e-2, LossKind::mse, nullptr).total;
    *param = keep;
    const double fd = (up - dn) / (2 * h);
    worst = std::max(worst, std::abs(fd - g) / std::max(1.0, std::abs(fd)));
  };
  for (int l = 0; l < net.depth(); ++l) {
    for (int j = 0; j < ring.n(); ++j)
      for (int r = 0; r < net.layers[l].taps[j].rows(); ++r)
        for (int c = 0; c < net.layers[l].taps[j].cols(); ++c)
          probe(&net.layers[l].taps[j](r, c), grad[l].taps[j](r, c));
    for (int k = 0; k < net.layers[l].c_out(); ++k)
      probe(&net.layers[l].bias(k), grad[l].bias(k));
  }
  return {"loss_gradient_matches_finite_difference", worst < 1e-5, fmt_err(worst)};
}

CheckResult check_resample_roundtrip(bool) {
  std::mt19937_64 rng(18);
  double worst = 0.0;
  for (const Ring& big : {Ring::d1(16), Ring::d2(8, 8)}) {
    Ring small = downsampled_ring(big, 2);
    // Band-limited below the small-ring Nyquist: build from low frequencies.
    VectorXcd hat = VectorXcd::Zero(big.n());
    std::normal_distribution<double> g(0.0, 1.0);
    auto set_pair = [&](int t) {
      cplx v(g(rng), g(rng));
      hat(t) = v;
      hat(big.conj_partner(t)) += std::conj(v);
    };
    if (big.axes() == 1) {
      set_pair(0);
      set_pair(1);
      set_pair(3);
    } else {
      set_pair(big.flat(0, 1));
      set_pair(big.flat(1, 1));
      set_pair(big.flat(1, big.dims[1] - 1));
    }
    VectorXcd xs = fourier::synthesis(big, hat);
    Signal x(big.n(), 1);
    for (int i = 0; i < big.n(); ++i) x(i, 0) = xs(i).real();
    Signal down = downsample(big, x, 2);
    Signal up = upsample(small, down, 2);
    worst = std::max(worst, (up - x).cwiseAbs().maxCoeff());
  }
  return {"upsample_inverts_downsample_bandlimited", worst < 1e-10, fmt_err(worst)};
}

CheckResult check_fc_embedding(bool fast) {
  std::mt19937_64 rng(19);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  const Ring ring = Ring::d1(6);
  const int c_in = 2, reps = fast ? 2 : 5;
  double worst = 0.0;
  for (int r = 0; r < reps; ++r) {
    FCNetwork fc;
    const int d0 = ring.n() * c_in;
    std::vector<int> widths = {d0, 5, 4};
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
      MatrixXd A(widths[l + 1], widths[l]);
      for (int i = 0; i < A.rows(); ++i)
        for (int jj = 0; jj < A.cols(); ++jj) A(i, jj) = std::abs(g(rng));
      fc.A.push_back(A);
      fc.d.push_back(VectorXd::Constant(widths[l + 1], 0.1));
    }
    Network cnn = fc_to_cnn(fc, ring, c_in);
    Signal x(ring.n(), c_in);
    for (int i = 0; i < ring.n(); ++i)
      for (int c = 0; c < c_in; ++c) x(i, c) = u(rng);
    Signal y = evaluate(cnn, x);
    // At output position p the CNN must report fc applied to the translate by -p.
    for (int p = 0; p < ring.n(); ++p) {
      Signal xp = translate(ring, x, ring.negate(p));
      VectorXd flat(d0);
      for (int c = 0; c < c_in; ++c)
        for (int i = 0; i < ring.n(); ++i) flat(c * ring.n() + i) = xp(i, c);
      VectorXd want = fc_forward(fc, flat);
      for (int k = 0; k < want.size(); ++k)
        worst = std::max(worst, std::abs(y(p, k) - want(k)));
    }
  }
  return {"fc_network_embeds_positively", worst < 1e-9, fmt_err(worst)};
}

CheckResult check_checkpoint(bool) {
  std::mt19937_64 rng(20);
  Ring ring = Ring::d2(3, 4);
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::blend_avg3, 0.3);
  net.layers = {random_filter(ring, 2, 1, rng), random_filter(ring, 2, 2, rng)};
  net.seed = 77;
  std::vector<uint8_t> bytes = checkpoint_bytes(net);
  Network back = checkpoint_parse(bytes.data(), bytes.size());
  std::vector<uint8_t> again = checkpoint_bytes(back);
  if (bytes != again) return {"checkpoint_roundtrip_bit_exact", false, "byte streams differ"};
  return {"checkpoint_roundtrip_bit_exact", true, std::to_string(bytes.size()) + " bytes"};
}

}  // namespace

std::vector<CheckResult> run_selfchecks(bool fast) {
  std::vector<CheckResult> out;
  out.push_back(check_transform_oracle(fast));
  out.push_back(check_convolution_theorem(fast));
  out.push_back(check_te_structure(fast));
  out.push_back(check_frequency_svd(fast));
  out.push_back(check_rank_identity_pooling(fast));
  out.push_back(check_identity_cost(fast));
  out.push_back(check_gradient(fast));
  out.push_back(check_resample_roundtrip(fast));
  out.push_back(check_fc_embedding(fast));
  out.push_back(check_checkpoint(fast));
  return out;
}

}  // namespace cbn
