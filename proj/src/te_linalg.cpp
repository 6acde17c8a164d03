#include "te_linalg.h"

#include <Eigen/SVD>
#include <limits>

namespace cbn {

ConvFilter zero_filter(const Ring& ring, int c_out, int c_in) {
  ConvFilter f;
  f.taps.assign(ring.n(), MatrixXd::Zero(c_out, c_in));
  f.bias = VectorXd::Zero(c_out);
  return f;
}

VectorXd cyclic_conv(const Ring& ring, const VectorXd& a, const VectorXd& b) {
  require(a.size() == b.size(), "cyclic_conv: length mismatch");
  require(a.size() == ring.n(), "cyclic_conv: length does not match ring");
  const int n = ring.n();
  VectorXd out = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) acc += a(j) * b(ring.add(i, j));
    out(i) = acc;
  }
  return out;
}

Signal cross_channel_conv(const Ring& ring, const ConvFilter& f, const Signal& x) {
  require(x.rows() == ring.n(), "cross_channel_conv: pixel count mismatch");
  require(x.cols() == f.c_in(), "cross_channel_conv: channel mismatch");
  const int n = ring.n();
  Signal out = Signal::Zero(n, f.c_out());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int src = ring.add(i, j);
      // out.row(i) += taps[j] * x.row(src)^T
      out.row(i).noalias() += (f.taps[j] * x.row(src).transpose()).transpose();
    }
  }
  return out;
}

MatrixXd te_matrix(const Ring& ring, const ConvFilter& f) {
  const int n = ring.n();
  const int co = f.c_out(), ci = f.c_in();
  MatrixXd W(n * co, n * ci);
  for (int k = 0; k < co; ++k)
    for (int s = 0; s < ci; ++s)
      for (int p = 0; p < n; ++p)
        for (int q = 0; q < n; ++q) W(k * n + p, s * n + q) = f.taps[ring.sub(q, p)](k, s);
  return W;
}

std::vector<MatrixXcd> frequency_blocks(const Ring& ring, const ConvFilter& f) {
  const int n = ring.n();
  const int co = f.c_out(), ci = f.c_in();
  std::vector<MatrixXcd> blocks(n, MatrixXcd::Zero(co, ci));
  VectorXd taps(n);
  for (int k = 0; k < co; ++k) {
    for (int s = 0; s < ci; ++s) {
      for (int j = 0; j < n; ++j) taps(j) = f.taps[j](k, s);
      VectorXcd lam = fourier::circulant_eigenvalues(ring, taps);
      for (int t = 0; t < n; ++t) blocks[t](k, s) = lam(t);
    }
  }
  return blocks;
}

FreqSVD frequency_svd_blocks(const Ring& ring, const std::vector<MatrixXcd>& blocks,
                             bool directions) {
  FreqSVD out;
  out.ring = ring;
  require(!blocks.empty(), "frequency_svd: no blocks");
  out.c_out = static_cast<int>(blocks[0].rows());
  out.c_in = static_cast<int>(blocks[0].cols());
  out.has_directions = directions;
  out.s.resize(blocks.size());
  if (directions) {
    out.U.resize(blocks.size());
    out.V.resize(blocks.size());
  }
  for (size_t t = 0; t < blocks.size(); ++t) {
    unsigned opts = directions ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : 0;
    Eigen::JacobiSVD<MatrixXcd> svd(blocks[t], opts);
    const auto& sv = svd.singularValues();
    out.s[t].assign(sv.data(), sv.data() + sv.size());
    if (directions) {
      out.U[t] = svd.matrixU();
      out.V[t] = svd.matrixV();
    }
  }
  return out;
}

FreqSVD frequency_svd(const Ring& ring, const ConvFilter& f, bool directions) {
  return frequency_svd_blocks(ring, frequency_blocks(ring, f), directions);
}

ConvFilter filter_from_te(const Ring& ring, const MatrixXd& dense, int c_out, int c_in,
                          double* max_violation) {
  const int n = ring.n();
  require(dense.rows() == static_cast<long>(n) * c_out && dense.cols() == static_cast<long>(n) * c_in,
          "filter_from_te: dense shape mismatch");
  ConvFilter f = zero_filter(ring, c_out, c_in);
  for (int k = 0; k < c_out; ++k)
    for (int s = 0; s < c_in; ++s)
      for (int q = 0; q < n; ++q) f.taps[q](k, s) = dense(k * n + 0, s * n + q);
  if (max_violation) {
    double worst = 0.0;
    for (int k = 0; k < c_out; ++k)
      for (int s = 0; s < c_in; ++s)
        for (int p = 0; p < n; ++p)
          for (int q = 0; q < n; ++q) {
            const double expect = f.taps[ring.sub(q, p)](k, s);
            worst = std::max(worst, std::abs(dense(k * n + p, s * n + q) - expect));
          }
    *max_violation = worst;
  }
  return f;
}

double pseudo_det(const FreqSVD& svd, double tol) {
  require(tol > 0.0 && tol < 1.0, "pseudo_det: tol must be in (0,1)");
  const double cut = tol * svd.s_max();
  double prod = 1.0;
  for (const auto& freq : svd.s)
    for (double v : freq)
      if (v > cut) prod *= v;
  return prod;
}

Signal PoolingSpec::apply(const Signal& x) const {
  require(x.rows() == ring.n(), "pooling: pixel count mismatch");
  Signal out(x.rows(), x.cols());
  for (int c = 0; c < x.cols(); ++c) out.col(c) = cyclic_conv(ring, m, x.col(c));
  return out;
}

MatrixXd PoolingSpec::dense(int channels) const {
  const int n = ring.n();
  MatrixXd M = MatrixXd::Zero(static_cast<long>(n) * channels, static_cast<long>(n) * channels);
  for (int c = 0; c < channels; ++c)
    for (int p = 0; p < n; ++p)
      for (int q = 0; q < n; ++q) M(c * n + p, c * n + q) = m(ring.sub(q, p));
  return M;
}

const char* PoolingSpec::kind_name(Kind k) {
  switch (k) {
    case identity: return "identity";
    case blend_avg3: return "blend_avg3";
    case custom: return "custom";
  }
  return "unknown";
}

PoolingSpec::Kind PoolingSpec::kind_from_name(const std::string& name) {
  if (name == "identity") return identity;
  if (name == "blend_avg3") return blend_avg3;
  if (name == "custom") return custom;
  fail_invalid("unknown pooling kind: " + name);
}

namespace {

// The 3-point (1D) or 3x3 (2D) cyclic neighborhood average.
VectorXd neighborhood_avg_filter(const Ring& ring) {
  VectorXd a = VectorXd::Zero(ring.n());
  if (ring.axes() == 1) {
    const int n = ring.dims[0];
    for (int d : {0, 1, n - 1}) a(((d % n) + n) % n) += 1.0 / 3.0;
  } else {
    const int n1 = ring.dims[0], n2 = ring.dims[1];
    for (int d1 : {0, 1, n1 - 1})
      for (int d2 : {0, 1, n2 - 1}) a(ring.flat(((d1 % n1) + n1) % n1, ((d2 % n2) + n2) % n2)) += 1.0 / 9.0;
  }
  return a;
}

}  // namespace

PoolingSpec pooling_operator(const Ring& ring, PoolingSpec::Kind kind, double beta,
                             const VectorXd* custom_m, bool require_invertible) {
  require(ring.valid(), "pooling_operator: invalid ring");
  PoolingSpec spec;
  spec.kind = kind;
  spec.ring = ring;
  spec.beta = beta;
  const int n = ring.n();
  switch (kind) {
    case PoolingSpec::identity: {
      spec.m = VectorXd::Zero(n);
      spec.m(0) = 1.0;
      break;
    }
    case PoolingSpec::blend_avg3: {
      require(beta >= 0.0 && beta <= 1.0, "pooling_operator: beta must lie in [0,1]");
      spec.m = beta * neighborhood_avg_filter(ring);
      spec.m(0) += 1.0 - beta;
      break;
    }
    case PoolingSpec::custom: {
      require(custom_m != nullptr, "pooling_operator: custom kind needs a filter");
      require(custom_m->size() == n, "pooling_operator: custom filter length mismatch");
      spec.m = *custom_m;
      break;
    }
  }
  spec.m_tilde = fourier::circulant_eigenvalues(ring, spec.m);
  double min_abs = spec.m_tilde.cwiseAbs().minCoeff();
  spec.invertible = min_abs > kEpsInv;
  if (require_invertible && !spec.invertible) {
    fail_invalid(std::string("pooling_operator: non-invertible pooling (min |m_tilde| = ") +
                 std::to_string(min_abs) + ")");
  }
  spec.M_bar = 0.0;
  for (int t = 0; t < n; ++t) {
    const double a = std::abs(spec.m_tilde(t));
    spec.M_bar += (a > kEpsInv) ? 1.0 / (a * a) : std::numeric_limits<double>::infinity();
  }
  return spec;
}

}  // namespace cbn
