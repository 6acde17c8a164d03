#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bounds.h"
#include "construct.h"

using namespace cbn;

namespace {

std::mt19937_64 g_rng(31);

ConvFilter random_filter(const Ring& ring, int c_out, int c_in) {
  std::normal_distribution<double> g(0.0, 1.0);
  ConvFilter f = zero_filter(ring, c_out, c_in);
  for (auto& tap : f.taps)
    for (int r = 0; r < tap.rows(); ++r)
      for (int c = 0; c < tap.cols(); ++c) tap(r, c) = g(g_rng);
  return f;
}

// Single-channel filter with the prescribed real eigenvalue at each frequency
// pair (hat(t) = hat(-t) = value).
ConvFilter filter_with_spectrum(const Ring& ring, const VectorXd& values) {
  VectorXcd hat(ring.n());
  for (int t = 0; t < ring.n(); ++t) hat(t) = values(t);
  // Eigenvalues follow the +1 kernel, so invert through the -1 kernel and n.
  VectorXcd taps = fourier::transform(ring, hat, -1) / static_cast<double>(ring.n());
  ConvFilter f = zero_filter(ring, 1, 1);
  for (int j = 0; j < ring.n(); ++j) f.taps[j](0, 0) = taps(j).real();
  return f;
}

Network linear_net(const Ring& ring, const ConvFilter& f, const PoolingSpec& pooling) {
  Network net;
  net.ring = ring;
  net.pooling = pooling;
  net.layers = {f};
  net.final_pool = false;
  return net;
}

}  // namespace

TEST_CASE("filter_with_spectrum builds the intended eigenvalues") {
  const Ring ring = Ring::d1(8);
  VectorXd want(8);
  want << 1.0, 2.0, 0.0, 0.5, 3.0, 0.5, 0.0, 2.0;  // symmetric under t -> -t
  ConvFilter f = filter_with_spectrum(ring, want);
  auto blocks = frequency_blocks(ring, f);
  for (int t = 0; t < 8; ++t) CHECK(std::abs(blocks[t](0, 0) - want(t)) < 1e-12);
}

TEST_CASE("rank_m equals the dense thresholded rank under identity pooling") {
  int checked = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    Ring ring = (rep % 4 == 0) ? Ring::d2(2 + rep % 3, 3) : Ring::d1(3 + rep % 6);
    ConvFilter f = random_filter(ring, 1 + rep % 3, 1 + (rep / 3) % 3);
    if (rep % 7 == 0) {
      // Mix in genuinely rank-deficient instances.
      for (auto& tap : f.taps) tap.col(0).setZero();
    }
    PoolingSpec id = pooling_operator(ring, PoolingSpec::identity, 0.0);
    const double rm = rank_m(frequency_svd(ring, f), id, kTauRank);
    Eigen::BDCSVD<MatrixXd> svd(te_matrix(ring, f));
    const double cut = kTauRank * svd.singularValues().maxCoeff();
    int dense_rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
      dense_rank += svd.singularValues()(i) > cut ? 1 : 0;
    REQUIRE(std::lround(rm) == dense_rank);
    ++checked;
  }
  CHECK(checked == 1000);
}

TEST_CASE("rank_m weights counts by the inverse squared pooling eigenvalues") {
  const Ring ring = Ring::d1(8);
  PoolingSpec blend = pooling_operator(ring, PoolingSpec::blend_avg3, 0.5);
  VectorXd values = VectorXd::Zero(8);
  values(0) = 2.0;
  values(1) = 1.0;
  values(7) = 1.0;
  values(4) = 0.7;
  ConvFilter f = filter_with_spectrum(ring, values);
  const double rm = rank_m(frequency_svd(ring, f), blend, kTauRank);
  double want = 0.0;
  for (int t : {0, 1, 7, 4}) want += 1.0 / std::norm(blend.m_tilde(t));
  CHECK(rm == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("rank_m reports infinity when a dead pooling frequency is excited") {
  const Ring ring = Ring::d1(4);
  VectorXd m = VectorXd::Zero(4);
  m.setConstant(0.25);  // global average: m_tilde = (1, 0, 0, 0)
  PoolingSpec dead = pooling_operator(ring, PoolingSpec::custom, 0.0, &m);
  VectorXd excites(4), safe(4);
  excites << 1.0, 0.5, 0.0, 0.5;
  safe << 1.0, 0.0, 0.0, 0.0;
  bool infinite = false;
  const double rm_bad = rank_m(frequency_svd(ring, filter_with_spectrum(ring, excites)), dead,
                               kTauRank, &infinite);
  CHECK(infinite);
  CHECK(std::isinf(rm_bad));
  infinite = true;
  const double rm_ok = rank_m(frequency_svd(ring, filter_with_spectrum(ring, safe)), dead,
                              kTauRank, &infinite);
  CHECK_FALSE(infinite);
  CHECK(rm_ok == doctest::Approx(1.0));
}

TEST_CASE("decomposition cost sums inverse squared eigenvalues over the support") {
  const Ring ring = Ring::d1(8);
  PoolingSpec blend = pooling_operator(ring, PoolingSpec::blend_avg3, 0.25);
  FrequencySupport support;
  support.per_channel = {{0, 1, 7}, {2, 6}};
  double want = 0.0;
  for (int t : {0, 1, 7}) want += 1.0 / std::norm(blend.m_tilde(t));
  for (int t : {2, 6}) want += 1.0 / std::norm(blend.m_tilde(t));
  CHECK(cbn_upper_bound(support, blend) == doctest::Approx(want).epsilon(1e-12));

  FrequencySupport empty_channel;
  empty_channel.per_channel = {{0}, {}};
  CHECK_THROWS_AS(cbn_upper_bound(empty_channel, blend), Error);

  // Monotonicity: enlarging a support never lowers the cost.
  FrequencySupport bigger = support;
  bigger.per_channel[1].push_back(3);
  bigger.per_channel[1].push_back(5);
  CHECK(cbn_upper_bound(bigger, blend) >= cbn_upper_bound(support, blend));
}

TEST_CASE("jacobian bounds on an identity network hit the closed forms") {
  const Ring ring = Ring::d1(8);
  PoolingSpec blend = pooling_operator(ring, PoolingSpec::blend_avg3, 0.5);
  const int c = 3, depth = 4;
  Network id = identity_network(ring, blend, c, depth, 0.0);
  std::vector<Signal> probes;
  probes.push_back(Signal::Constant(ring.n(), c, -1.0));  // dies at the second relu
  probes.push_back(Signal::Constant(ring.n(), c, 0.5));
  Signal ramp(ring.n(), c);
  for (int i = 0; i < ring.n(); ++i)
    for (int k = 0; k < c; ++k) ramp(i, k) = 0.2 + 0.1 * i;
  probes.push_back(ramp);

  JacobianBounds jb = jacobian_lower_bounds(id, probes, kTauRank);
  CHECK(jb.bound_general == doctest::Approx(ring.n() * c));  // max |m_tilde| is 1
  CHECK(jb.has_constant);
  CHECK(jb.constant_probe == 1);
  CHECK(jb.bound_constant == doctest::Approx(c * blend.M_bar).epsilon(1e-9));
  CHECK(jb.skipped_kink_probes == 1);

  // Squeeze: lower bounds stay below the per-layer norm.
  const double slack = 1e-6 * id.theta_sq();
  CHECK(jb.bound_constant <= id.theta_sq() / id.depth() + slack);
  CHECK(jb.bound_general <= id.theta_sq() / id.depth() + slack);

  std::vector<Signal> no_constant = {ramp};
  JacobianBounds jb2 = jacobian_lower_bounds(id, no_constant, kTauRank);
  CHECK_FALSE(jb2.has_constant);
  CHECK_FALSE(jb2.constant_absent_reason.empty());
}

TEST_CASE("finite depth lower term sums scaled logs over the retained spectrum") {
  const Ring ring = Ring::d1(4);
  PoolingSpec id_pool = pooling_operator(ring, PoolingSpec::identity, 0.0);
  VectorXd values(4);
  values << 2.0, 3.0, 4.0, 3.0;
  Network net = linear_net(ring, filter_with_spectrum(ring, values), id_pool);
  Signal x0 = Signal::Constant(4, 1, 1.0);
  FreqSVD jsvd = jf_freq_svd(net, x0);
  const double got = r1_lower_bound(jsvd, id_pool, kTauRank);
  const double want = 2.0 * (std::log(2.0) + std::log(3.0) + std::log(4.0) + std::log(3.0));
  CHECK(got == doctest::Approx(want).epsilon(1e-12));

  // A dead pooling frequency carrying signal is rejected.
  VectorXd m = VectorXd::Zero(4);
  m.setConstant(0.25);
  PoolingSpec dead = pooling_operator(ring, PoolingSpec::custom, 0.0, &m);
  CHECK_THROWS_AS(r1_lower_bound(jsvd, dead, kTauRank), Error);
}

TEST_CASE("jacobian frequency svd matches the dense jacobian svd") {
  for (int rep = 0; rep < 8; ++rep) {
    const Ring ring = rep % 2 ? Ring::d2(3, 4) : Ring::d1(8);
    Network net;
    net.ring = ring;
    net.pooling = pooling_operator(ring, PoolingSpec::blend_avg3, 0.3);
    net.layers = {random_filter(ring, 3, 2), random_filter(ring, 2, 3)};
    Signal x0(ring.n(), 2);
    x0.col(0).setConstant(0.8 + 0.1 * rep);
    x0.col(1).setConstant(0.5);
    FreqSVD fs = jf_freq_svd(net, x0);
    std::vector<double> freq_vals;
    for (const auto& per_t : fs.s) freq_vals.insert(freq_vals.end(), per_t.begin(), per_t.end());
    Eigen::BDCSVD<MatrixXd> dense(input_jacobian(net, x0));
    std::vector<double> dense_vals(dense.singularValues().data(),
                                   dense.singularValues().data() + dense.singularValues().size());
    std::sort(freq_vals.begin(), freq_vals.end());
    std::sort(dense_vals.begin(), dense_vals.end());
    REQUIRE(freq_vals.size() == dense_vals.size());
    for (size_t i = 0; i < freq_vals.size(); ++i)
      CHECK(std::abs(freq_vals[i] - dense_vals[i]) < 1e-9 * std::max(1.0, dense_vals.back()));
  }
}

TEST_CASE("weight residual bound is tight on identity networks") {
  for (double beta : {0.0, 0.5}) {
    const Ring ring = Ring::d1(8);
    PoolingSpec pool = beta == 0.0 ? pooling_operator(ring, PoolingSpec::identity, 0.0)
                                   : pooling_operator(ring, PoolingSpec::blend_avg3, beta);
    Network id = identity_network(ring, pool, 2, 5, 0.0);
    Signal x0 = Signal::Constant(ring.n(), 2, 0.9);
    WeightBottleneck wb = weight_bottleneck_residual(id, x0, kTauRank);
    CHECK(wb.kappa == ring.n() * 2);
    CHECK_FALSE(wb.degenerate);
    CHECK(wb.holds);
    CHECK(std::abs(wb.c1) < 1e-8);
    for (double r : wb.residual_per_layer) CHECK(r < 1e-9);
    CHECK(wb.lhs <= wb.rhs + 1e-6 * id.theta_sq());
    for (double frac : wb.fraction_within) CHECK(frac == 1.0);
    for (bool ok : wb.corollary_holds) CHECK(ok);
  }
}

TEST_CASE("weight residual inequality holds on random networks at constant probes") {
  for (int rep = 0; rep < 6; ++rep) {
    const Ring ring = rep % 2 ? Ring::d2(4, 2) : Ring::d1(8);
    Network net;
    net.ring = ring;
    net.pooling = pooling_operator(ring, PoolingSpec::blend_avg3, 0.25);
    net.layers = {random_filter(ring, 3, 1), random_filter(ring, 3, 3),
                  random_filter(ring, 1, 3)};
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& layer : net.layers)
      for (int k = 0; k < layer.c_out(); ++k) layer.bias(k) = g(g_rng);
    Signal x0 = Signal::Constant(ring.n(), 1, 0.4 + 0.2 * rep);
    bool near_kink = false;
    input_jacobian(net, x0, &near_kink);
    if (near_kink) continue;
    WeightBottleneck wb = weight_bottleneck_residual(net, x0, kTauRank);
    CHECK(wb.lhs <= wb.rhs + 1e-6 * net.theta_sq());
    CHECK(wb.holds);
  }
}

TEST_CASE("weight residual bound degenerates gracefully at zero jacobian") {
  const Ring ring = Ring::d1(4);
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::identity, 0.0);
  net.layers = {zero_filter(ring, 2, 1), zero_filter(ring, 1, 2)};
  net.layers[0].bias.setConstant(1.0);  // keeps relu inputs off the kink
  Signal x0 = Signal::Constant(4, 1, 0.5);
  WeightBottleneck wb = weight_bottleneck_residual(net, x0, kTauRank);
  CHECK(wb.degenerate);
  CHECK(wb.kappa == 0);
  // With no retained directions the replacement is zero and the residual is
  // the full parameter norm of the weights and biases.
  CHECK(wb.lhs == doctest::Approx(net.theta_sq()));
}

TEST_CASE("activation profile on a balanced no-pooling network") {
  const Ring ring = Ring::d1(8);
  PoolingSpec id_pool = pooling_operator(ring, PoolingSpec::identity, 0.0);
  Network id = identity_network(ring, id_pool, 2, 6, 0.0);
  Signal x0 = Signal::Constant(ring.n(), 2, 1.3);
  const double c_ntk = ntk_trace(id, x0) / id.depth();
  ActivationRecord ar = activation_profile(id, x0, c_ntk, kTauRank);
  REQUIRE(static_cast<int>(ar.act_sq.size()) == id.depth());
  for (double a : ar.act_sq) CHECK(a == doctest::Approx(x0.squaredNorm()));
  CHECK(ar.k == ring.n() * 2);
  CHECK(std::abs(ar.c1) < 1e-8);
  CHECK(ar.pdet == doctest::Approx(1.0));
  CHECK(ar.balance_ok);
  CHECK(ar.holds);
  CHECK(ar.rhs_total >= ar.sum_act_sq);
  CHECK(ar.rhs_total_general == doctest::Approx(ar.rhs_total).epsilon(1e-9));

  PoolingSpec blend = pooling_operator(ring, PoolingSpec::blend_avg3, 0.5);
  Network pooled = identity_network(ring, blend, 2, 3, 0.0);
  CHECK_THROWS_AS(activation_profile(pooled, x0, 1.0, kTauRank), Error);
}

TEST_CASE("layer spectrum rows square-sum to the pooled weight norm") {
  const Ring ring = Ring::d2(4, 4);
  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::blend_avg3, 0.35);
  net.layers = {random_filter(ring, 3, 2), random_filter(ring, 2, 3)};
  auto rows = layer_spectrum_report(net);
  std::vector<double> totals(net.depth(), 0.0);
  for (const auto& r : rows) totals[r.layer - 1] += r.s * r.s;
  for (int l = 0; l < net.depth(); ++l) {
    MatrixXd MW = net.pooling.dense(net.layers[l].c_out()) * te_matrix(ring, net.layers[l]);
    CHECK(std::abs(totals[l] - MW.squaredNorm()) < 1e-9 * std::max(1.0, MW.squaredNorm()));
  }
  CHECK(spectrum_csv(ring, rows) == spectrum_csv(ring, layer_spectrum_report(net)));

  std::istringstream csv(spectrum_csv(ring, rows));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "layer,freq_index_1,freq_index_2,channel,singular_value,m_tilde_abs");
  std::string first;
  std::getline(csv, first);
  CHECK(first.rfind("1,1,1,1,", 0) == 0);  // 2D: both frequency indices 1-based
}
