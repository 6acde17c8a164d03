#pragma once

#include <array>

#include "network.h"

namespace cbn {

// Per-channel sets of supported flat frequency indices (0-based internally).
struct FrequencySupport {
  std::vector<std::vector<int>> per_channel;
};

// Pooling-weighted rank: sum over frequencies of (count of singular values
// above tau * s_max) / |m_tilde_t|^2. Returns +inf (and sets *infinite) when a
// non-invertible pooling frequency carries a nonzero singular value.
double rank_m(const FreqSVD& svd, const PoolingSpec& pooling, double tau, bool* infinite = nullptr);

// Evaluates sum_c sum_{i in I_c} |m_tilde_i|^{-2} for the given decomposition
// support. No minimization over decompositions is attempted.
double cbn_upper_bound(const FrequencySupport& support, const PoolingSpec& pooling);

struct JacobianBounds {
  double bound_general = 0.0;  // max over probes of rank(Jf) / max{m_max^2, 1}
  int general_probe = -1;
  bool has_constant = false;
  double bound_constant = 0.0;  // max over constant-channel probes of rank_m(Jf)
  int constant_probe = -1;
  bool constant_infinite = false;
  int skipped_kink_probes = 0;
  std::string constant_absent_reason;
};

JacobianBounds jacobian_lower_bounds(const Network& net, const std::vector<Signal>& probes,
                                     double tau);

// 2 sum over nonzero singular values of |m_tilde_t|^{-2} log(s_{t,c} |m_tilde_t|).
double r1_lower_bound(const FreqSVD& jac_svd, const PoolingSpec& pooling, double tau);

inline constexpr std::array<double, 3> kCorollaryPs = {0.1, 0.25, 0.5};

struct WeightBottleneck {
  int kappa = 0;
  double rank_m_jf = 0.0;
  double c1 = 0.0;
  double log_term = 0.0;
  double rhs = 0.0;  // c1 - log_term
  double lhs = 0.0;  // sum of per-layer residuals
  bool holds = false;
  bool degenerate = false;  // kappa == 0
  std::vector<double> residual_per_layer;  // ||W_l - U_l S_l V_l^T||_F^2 + n ||b_l||^2
  std::vector<int> retained_per_freq;
  std::vector<double> s_entries_abs;  // the |m_tilde_t|^{-1} diagonal, lowest frequency first
  std::array<double, 3> fraction_within{};  // per kCorollaryPs
  std::array<bool, 3> corollary_holds{};
};

// Builds the low-rank replacement of each layer from the per-frequency image
// projectors of the forward/backward Jacobians at a constant-channel point and
// measures the distance of the actual weights from it.
WeightBottleneck weight_bottleneck_residual(const Network& net, const Signal& x0, double tau);

struct ActivationRecord {
  std::vector<double> act_sq;  // ||alpha_{l-1}(x0)||_F^2 for l = 1..L
  double sum_act_sq = 0.0;
  int k = 0;
  double c = 0.0;
  double c1 = 0.0;
  double pdet = 1.0;
  double rhs_total = 0.0;
  double rhs_total_general = 0.0;
  bool holds = false;
  bool degenerate = false;  // k == 0
  std::array<double, 2> profile_ps = {0.1, 0.5};
  std::array<double, 2> per_layer_threshold{};
  std::array<double, 2> fraction_below{};
  std::vector<double> balance_residuals;
  bool balance_ok = false;
};

// Refuses networks with pooling; c_ntk is the caller-measured ntk_trace(x0)/L.
ActivationRecord activation_profile(const Network& net, const Signal& x0, double c_ntk,
                                    double tau);

struct SpectrumRow {
  int layer;    // 1-based
  int t;        // flat frequency, 0-based
  int ordinal;  // 1-based rank of the singular value within its frequency
  double s;     // singular value of m_tilde_t * B_t(w_layer)
  double mt_abs;
};

std::vector<SpectrumRow> layer_spectrum_report(const Network& net);
std::string spectrum_csv(const Ring& ring, const std::vector<SpectrumRow>& rows);

// Singular spectrum of Jf(x0) for constant-channel x0, via the TE structure.
FreqSVD jf_freq_svd(const Network& net, const Signal& x0, bool directions = false);

}  // namespace cbn
