#include "bounds.h"

#include <Eigen/SVD>
#include <cmath>
#include <limits>
#include <sstream>

namespace cbn {

FreqSVD jf_freq_svd(const Network& net, const Signal& x0, bool directions) {
  return frequency_svd_blocks(net.ring, jf_frequency_blocks(net, x0), directions);
}

double rank_m(const FreqSVD& svd, const PoolingSpec& pooling, double tau, bool* infinite) {
  require(svd.ring == pooling.ring, "rank_m: ring mismatch");
  if (infinite) *infinite = false;
  const double cut = tau * svd.s_max();
  double total = 0.0;
  for (int t = 0; t < static_cast<int>(svd.s.size()); ++t) {
    int count = 0;
    for (double v : svd.s[t]) count += (v > cut) ? 1 : 0;
    if (count == 0) continue;
    const double a = std::abs(pooling.m_tilde(t));
    if (a <= kEpsInv) {
      if (infinite) *infinite = true;
      return std::numeric_limits<double>::infinity();
    }
    total += count / (a * a);
  }
  return total;
}

double cbn_upper_bound(const FrequencySupport& support, const PoolingSpec& pooling) {
  const int n = pooling.ring.n();
  double total = 0.0;
  for (const auto& I : support.per_channel) {
    require(!I.empty(), "cbn_upper_bound: empty support set for a channel");
    for (int t : I) {
      require(t >= 0 && t < n, "cbn_upper_bound: frequency index out of range");
      const double a = std::abs(pooling.m_tilde(t));
      total += (a > kEpsInv) ? 1.0 / (a * a) : std::numeric_limits<double>::infinity();
    }
  }
  return total;
}

namespace {

int dense_rank(const MatrixXd& J, double tau, double* pdet = nullptr) {
  Eigen::BDCSVD<MatrixXd> svd(J);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) {
    if (pdet) *pdet = 1.0;
    return 0;
  }
  const double cut = tau * s(0);
  int r = 0;
  double prod = 1.0;
  for (int i = 0; i < s.size(); ++i)
    if (s(i) > cut) {
      ++r;
      prod *= s(i);
    }
  if (pdet) *pdet = prod;
  return r;
}

}  // namespace

JacobianBounds jacobian_lower_bounds(const Network& net, const std::vector<Signal>& probes,
                                     double tau) {
  require(!probes.empty(), "jacobian_lower_bounds: no probes");
  JacobianBounds out;
  const double m_max = net.pooling.mt_abs().maxCoeff();
  const double denom = std::max(m_max * m_max, 1.0);
  int constant_seen = 0;
  for (size_t i = 0; i < probes.size(); ++i) {
    bool kink = false;
    MatrixXd J = input_jacobian(net, probes[i], &kink);
    if (kink) {
      ++out.skipped_kink_probes;
      continue;
    }
    const double general = dense_rank(J, tau) / denom;
    if (general > out.bound_general) {
      out.bound_general = general;
      out.general_probe = static_cast<int>(i);
    }
    if (is_constant_channels(probes[i])) {
      ++constant_seen;
      bool inf_flag = false;
      const double rm = rank_m(jf_freq_svd(net, probes[i]), net.pooling, tau, &inf_flag);
      if (!out.has_constant || rm > out.bound_constant) {
        out.has_constant = true;
        out.bound_constant = rm;
        out.constant_probe = static_cast<int>(i);
        out.constant_infinite = inf_flag;
      }
    }
  }
  if (!out.has_constant)
    out.constant_absent_reason = constant_seen == 0
                                     ? "no constant-channel probe supplied"
                                     : "all constant-channel probes sat near ReLU kinks";
  return out;
}

double r1_lower_bound(const FreqSVD& jac_svd, const PoolingSpec& pooling, double tau) {
  require(jac_svd.ring == pooling.ring, "r1_lower_bound: ring mismatch");
  const double cut = tau * jac_svd.s_max();
  double total = 0.0;
  for (int t = 0; t < static_cast<int>(jac_svd.s.size()); ++t) {
    const double a = std::abs(pooling.m_tilde(t));
    for (double v : jac_svd.s[t]) {
      if (v <= cut) continue;
      require(a > kEpsInv, "r1_lower_bound: nonzero singular value at non-invertible pooling frequency");
      total += 2.0 / (a * a) * std::log(v * a);
    }
  }
  return total;
}

namespace {

// Projector onto the column space of A, rank thresholded at tau relative to
// A's own largest singular value.
MatrixXcd range_projector(const MatrixXcd& A, double tau) {
  Eigen::JacobiSVD<MatrixXcd> svd(A, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  const int rows = static_cast<int>(A.rows());
  if (s.size() == 0 || s(0) == 0.0) return MatrixXcd::Zero(rows, rows);
  const double cut = tau * s(0);
  int r = 0;
  while (r < s.size() && s(r) > cut) ++r;
  const MatrixXcd U = svd.matrixU().leftCols(r);
  return U * U.adjoint();
}

}  // namespace

WeightBottleneck weight_bottleneck_residual(const Network& net, const Signal& x0, double tau) {
  require(is_constant_channels(x0), "weight_bottleneck_residual: x0 must be constant along channels");
  WeightBottleneck out;
  const int L = net.depth();
  const int n = net.ring.n();

  ForwardTrace trace = forward(net, x0);
  std::vector<VectorXd> d(L - 1);
  for (int l = 0; l + 1 < L; ++l) d[l] = trace.mask[l].row(0).transpose();

  std::vector<std::vector<MatrixXcd>> blocks(L);
  for (int l = 0; l < L; ++l) blocks[l] = frequency_blocks(net.ring, net.layers[l]);
  std::vector<MatrixXcd> jf = jf_frequency_blocks(net, x0);
  FreqSVD jf_svd = frequency_svd_blocks(net.ring, jf);

  const double s_max = jf_svd.s_max();
  const double cut = tau * s_max;
  out.retained_per_freq.resize(n, 0);
  for (int t = 0; t < n; ++t) {
    for (double v : jf_svd.s[t])
      if (v > cut) ++out.retained_per_freq[t];
    out.kappa += out.retained_per_freq[t];
    for (int i = 0; i < out.retained_per_freq[t]; ++i)
      out.s_entries_abs.push_back(1.0 / std::abs(net.pooling.m_tilde(t)));
  }
  out.degenerate = out.kappa == 0;

  bool inf_flag = false;
  out.rank_m_jf = rank_m(jf_svd, net.pooling, tau, &inf_flag);
  require(!inf_flag, "weight_bottleneck_residual: infinite rank_m at x0");
  out.c1 = net.theta_sq() - L * out.rank_m_jf;
  for (int t = 0; t < n; ++t) {
    const double a = std::abs(net.pooling.m_tilde(t));
    for (double v : jf_svd.s[t])
      if (v > cut) out.log_term += 2.0 / (a * a) * std::log(v * a);
  }
  out.rhs = out.c1 - out.log_term;

  // Forward cumulative Jacobian blocks J(x -> alpha_l) per frequency, l = 0..L-1.
  // forward[l][t] with l = 0 the identity.
  std::vector<std::vector<MatrixXcd>> fwd(L);
  for (int t = 0; t < n; ++t) fwd[0].push_back(MatrixXcd::Identity(net.c_in(), net.c_in()));
  for (int l = 1; l < L; ++l) {
    fwd[l].resize(n);
    for (int t = 0; t < n; ++t) {
      MatrixXcd step = net.pooling.m_tilde(t) * blocks[l - 1][t] * fwd[l - 1][t];
      fwd[l][t] = d[l - 1].cast<cplx>().asDiagonal() * step;
    }
  }
  // Backward Jacobian blocks J(alpha~_l -> output), l = 1..L.
  std::vector<std::vector<MatrixXcd>> bwd(L);
  bwd[L - 1].resize(n);
  for (int t = 0; t < n; ++t) {
    MatrixXcd tail = MatrixXcd::Identity(net.c_out(), net.c_out());
    if (net.final_pool) tail *= net.pooling.m_tilde(t);
    bwd[L - 1][t] = tail;
  }
  for (int l = L - 2; l >= 0; --l) {
    bwd[l].resize(n);
    for (int t = 0; t < n; ++t)
      bwd[l][t] = bwd[l + 1][t] * blocks[l + 1][t] * d[l].cast<cplx>().asDiagonal() *
                  net.pooling.m_tilde(t);
  }

  out.residual_per_layer.assign(L, 0.0);
  for (int l = 0; l < L; ++l) {
    for (int t = 0; t < n; ++t) {
      const MatrixXcd& B = blocks[l][t];
      MatrixXcd approx = MatrixXcd::Zero(B.rows(), B.cols());
      const int keep = out.retained_per_freq[t];
      if (keep > 0) {
        MatrixXcd P_in = range_projector(fwd[l][t], tau);
        MatrixXcd P_out = range_projector(bwd[l][t].adjoint(), tau);
        MatrixXcd Wbar = P_out * B * P_in;
        Eigen::JacobiSVD<MatrixXcd> svd(Wbar, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const int avail = std::min<int>(keep, svd.singularValues().size());
        const double s_inv = 1.0 / std::abs(net.pooling.m_tilde(t));
        approx = svd.matrixU().leftCols(avail) * (s_inv * MatrixXcd::Identity(avail, avail)) *
                 svd.matrixV().leftCols(avail).adjoint();
      }
      out.residual_per_layer[l] += (B - approx).squaredNorm();
    }
    out.residual_per_layer[l] += n * net.layers[l].bias_sq();
  }
  for (double r : out.residual_per_layer) out.lhs += r;
  const double slack = 1e-6 * net.theta_sq();
  out.holds = out.lhs <= out.rhs + slack;

  for (size_t pi = 0; pi < kCorollaryPs.size(); ++pi) {
    const double p = kCorollaryPs[pi];
    const double thresh = (out.rhs + slack) / (p * L);
    int within = 0;
    for (double r : out.residual_per_layer) within += (r <= thresh) ? 1 : 0;
    out.fraction_within[pi] = static_cast<double>(within) / L;
    out.corollary_holds[pi] = out.fraction_within[pi] + 1e-12 >= 1.0 - p;
  }
  return out;
}

ActivationRecord activation_profile(const Network& net, const Signal& x0, double c_ntk,
                                    double tau) {
  const bool no_pooling = (net.pooling.m - VectorXd::Unit(net.ring.n(), 0)).cwiseAbs().maxCoeff() == 0.0;
  if (!no_pooling)
    fail_invalid("activation_profile: network uses pooling; the activation bound applies to "
                 "no-pooling networks only");
  ActivationRecord out;
  const int L = net.depth();
  ForwardTrace trace = forward(net, x0);
  out.act_sq.push_back(x0.squaredNorm());
  for (int l = 0; l + 1 < L; ++l) out.act_sq.push_back(trace.act[l].squaredNorm());
  for (double v : out.act_sq) out.sum_act_sq += v;

  MatrixXd J = input_jacobian(net, x0);
  out.k = dense_rank(J, tau, &out.pdet);
  out.c = c_ntk;
  out.degenerate = out.k == 0;
  if (out.degenerate) {
    out.rhs_total = std::numeric_limits<double>::infinity();
    out.rhs_total_general = out.rhs_total;
    out.holds = true;
  } else {
    out.c1 = net.theta_sq() - static_cast<double>(L) * out.k;
    const double base = out.c * std::exp(out.c1 / out.k) /
                        (out.k * std::pow(out.pdet, 2.0 / out.k));
    out.rhs_total = base * L;
    // With no pooling m_max = 1; taking the max probed rank equal to k makes
    // the derivation's extra exponential factor exp(L (m_max R / k - 1)) = 1.
    out.rhs_total_general = out.rhs_total;
    out.holds = out.sum_act_sq <= out.rhs_total;
    for (size_t pi = 0; pi < out.profile_ps.size(); ++pi) {
      const double p = out.profile_ps[pi];
      out.per_layer_threshold[pi] = base / p;
      int below = 0;
      for (double v : out.act_sq) below += (v <= out.per_layer_threshold[pi]) ? 1 : 0;
      out.fraction_below[pi] = static_cast<double>(below) / L;
    }
  }

  if (L >= 2) {
    out.balance_residuals = balancedness_residuals(net);
    double mean_w = 0.0;
    for (const auto& layer : net.layers) mean_w += layer.weight_sq_filter();
    mean_w /= L;
    double max_r = 0.0;
    for (double r : out.balance_residuals) max_r = std::max(max_r, std::abs(r));
    out.balance_ok = max_r <= 1e-3 * mean_w;
  } else {
    out.balance_ok = true;
  }
  return out;
}

std::vector<SpectrumRow> layer_spectrum_report(const Network& net) {
  std::vector<SpectrumRow> rows;
  const int n = net.ring.n();
  for (int l = 0; l < net.depth(); ++l) {
    auto blocks = frequency_blocks(net.ring, net.layers[l]);
    for (int t = 0; t < n; ++t) blocks[t] *= net.pooling.m_tilde(t);
    FreqSVD svd = frequency_svd_blocks(net.ring, blocks);
    for (int t = 0; t < n; ++t)
      for (size_t i = 0; i < svd.s[t].size(); ++i)
        rows.push_back({l + 1, t, static_cast<int>(i) + 1, svd.s[t][i],
                        std::abs(net.pooling.m_tilde(t))});
  }
  return rows;
}

std::string spectrum_csv(const Ring& ring, const std::vector<SpectrumRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "layer,freq_index_1,freq_index_2,channel,singular_value,m_tilde_abs\n";
  for (const auto& row : rows) {
    auto c = ring.coords(row.t);
    const int f1 = c[0] + 1;
    const int f2 = ring.axes() == 1 ? 0 : c[1] + 1;
    os << row.layer << "," << f1 << "," << f2 << "," << row.ordinal << "," << row.s << ","
       << row.mt_abs << "\n";
  }
  return os.str();
}

}  // namespace cbn
