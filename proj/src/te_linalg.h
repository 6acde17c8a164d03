#pragma once

#include "common.h"
#include "fourier.h"

namespace cbn {

// One layer's weights. taps[j](k, s) is the coefficient the output at pixel i,
// channel k picks up from input pixel i+j, channel s:
//   (w conv x)_{i,k} = sum_j sum_s taps[j](k, s) * x_{(i+j) mod n, s}.
struct ConvFilter {
  std::vector<MatrixXd> taps;  // ring.n() entries, each c_out x c_in
  VectorXd bias;               // c_out

  int c_out() const { return taps.empty() ? 0 : static_cast<int>(taps[0].rows()); }
  int c_in() const { return taps.empty() ? 0 : static_cast<int>(taps[0].cols()); }

  // Squared filter norm sum_j ||taps_j||_F^2 (the matrix norm is n times this).
  double weight_sq_filter() const {
    double t = 0.0;
    for (const auto& m : taps) t += m.squaredNorm();
    return t;
  }
  double bias_sq() const { return bias.squaredNorm(); }
};

ConvFilter zero_filter(const Ring& ring, int c_out, int c_in);

// Frequency-indexed singular system of a TE matrix: per flat frequency t, the
// singular values of the channel-mixing block, sorted descending.
struct FreqSVD {
  Ring ring;
  int c_out = 0, c_in = 0;
  std::vector<std::vector<double>> s;  // [t][ordinal]
  bool has_directions = false;
  std::vector<MatrixXcd> U, V;  // thin factors per frequency when requested

  double s_max() const {
    double m = 0.0;
    for (const auto& freq : s)
      for (double v : freq) m = std::max(m, v);
    return m;
  }

  // Count of singular values above tau * s_max (global relative threshold).
  int rank(double tau) const {
    const double cut = tau * s_max();
    int r = 0;
    for (const auto& freq : s)
      for (double v : freq) r += (v > cut) ? 1 : 0;
    return r;
  }
};

struct PoolingSpec {
  enum Kind { identity, blend_avg3, custom };

  Kind kind = identity;
  double beta = 0.0;
  Ring ring;
  VectorXd m;         // filter taps, flat ring layout
  VectorXcd m_tilde;  // circulant eigenvalues of m
  bool invertible = false;
  double M_bar = 0.0;  // sum_t |m_tilde_t|^{-2}

  VectorXd mt_abs() const { return m_tilde.cwiseAbs(); }
  bool is_identity_kind() const { return kind == identity; }

  // Per-channel cyclic convolution with m.
  Signal apply(const Signal& x) const;
  // Dense circulant of m acting on a c-channel signal (block diagonal).
  MatrixXd dense(int channels) const;

  static const char* kind_name(Kind k);
  static Kind kind_from_name(const std::string& name);
};

// Builds the pooling operator. `custom_m` is consulted only for kind custom.
// When require_invertible is set, rejects any m with min_t |m_tilde_t| <= eps_inv.
PoolingSpec pooling_operator(const Ring& ring, PoolingSpec::Kind kind, double beta,
                             const VectorXd* custom_m = nullptr,
                             bool require_invertible = false);

VectorXd cyclic_conv(const Ring& ring, const VectorXd& a, const VectorXd& b);
Signal cross_channel_conv(const Ring& ring, const ConvFilter& f, const Signal& x);

// Dense matrix on channel-blocked vectors: row k*n+p, column s*n+q holds
// taps[(q-p) mod n](k, s).
MatrixXd te_matrix(const Ring& ring, const ConvFilter& f);

// Per-frequency channel-mixing blocks B_t(k, s) = lambda_t(taps(:, k, s)).
std::vector<MatrixXcd> frequency_blocks(const Ring& ring, const ConvFilter& f);

FreqSVD frequency_svd(const Ring& ring, const ConvFilter& f, bool directions = false);
FreqSVD frequency_svd_blocks(const Ring& ring, const std::vector<MatrixXcd>& blocks,
                             bool directions = false);

// Recovers the generating filter of a dense TE matrix from its first block row.
// If max_violation is given, fills it with the largest deviation of the dense
// matrix from the TE structure implied by the recovered filter.
ConvFilter filter_from_te(const Ring& ring, const MatrixXd& dense, int c_out, int c_in,
                          double* max_violation = nullptr);

// Product of singular values exceeding tol * s_max; 1 for an empty spectrum.
double pseudo_det(const FreqSVD& svd, double tol);

}  // namespace cbn
