#pragma once

#include "network.h"

namespace cbn {

// depth layers of per-channel m^{-1} filters computing the identity (or, with
// a support restriction, the band projection) on inputs bounded by K. The
// first hidden layer shifts by +K so the ReLUs stay in the linear regime and
// the final layer shifts back; with depth 1 no shift is needed. Per-layer
// weight matrix norm is channels * M_bar (or the per-channel support sums).
// support, when given, holds one symmetric set of flat frequency indices per
// channel; the caller is responsible for K also covering the projected values.
// condition_number receives max|m_tilde| / min|m_tilde| when non-null.
Network identity_network(const Ring& ring, const PoolingSpec& pooling, int channels, int depth,
                         double K, const std::vector<std::vector<int>>* support = nullptr,
                         double* condition_number = nullptr);

// f_a + f_b by stacking channels: shared input, block-diagonal hidden layers,
// concatenated final layer with summed bias. Weight norms add exactly; the
// full parameter norm adds exactly whenever one of the final biases is zero.
Network parallel_sum(const Network& a, const Network& b);

// Layer concatenation computing second(relu(first(x))). The interface ReLU is
// inactive (so the composite equals second o first) on inputs where first's
// output is entrywise nonnegative; use bump_output_shift / the identity
// network's bias device to arrange that. Requires first.final_pool or an
// effectively-identity pooling so the interface sees the same operator first
// applied standalone.
Network compose(const Network& first, const Network& second);

// Adds the constant per-channel vector kappa to the network's output by
// adjusting the final bias (divided by m_tilde_0 when the output is pooled).
void bump_output_shift(Network& net, const VectorXd& kappa);

// After this call net(x + gamma broadcast over pixels) equals the old net(x):
// subtracts the first layer's frequency-zero response to gamma from its bias.
void compensate_input_shift(Network& net, const VectorXd& gamma);

struct FCNetwork {
  std::vector<MatrixXd> A;  // layer matrices, ReLU between them, linear last
  std::vector<VectorXd> d;  // biases, same length as A

  int depth() const { return static_cast<int>(A.size()); }
  int input_dim() const { return A.empty() ? 0 : static_cast<int>(A.front().cols()); }
  int output_dim() const { return A.empty() ? 0 : static_cast<int>(A.back().rows()); }
  void validate() const;
};

VectorXd fc_forward(const FCNetwork& fc, const VectorXd& x);

// No-pooling CNN of depth fc.depth() + 1 whose pixel-p output equals
// fc(vec(T_{-p} x)). The first layer materializes every translation of the
// input across n * c_in channels via impulse taps; the remaining layers apply
// the FC matrices as pixel-local filters. Exact on entrywise-positive inputs
// (the first ReLU must pass the raw pixel values through).
Network fc_to_cnn(const FCNetwork& fc, const Ring& ring, int c_in);

// Fails with a shift recommendation when x has a non-positive entry.
void check_positive_domain(const Signal& x);

// Subsampling every s-th pixel along each axis, offset 0: y_j = x_{s j}.
Signal downsample(const Ring& ring, const Signal& x, int s);
Ring downsampled_ring(const Ring& ring, int s);

// Fourier zero-padding interpolation from ring_small to the s-times larger
// ring. Coefficients are placed symmetrically (conjugate pairs mirrored, a
// shared Nyquist entry split in half) so real inputs give real outputs.
Signal upsample(const Ring& ring_small, const Signal& x, int s);

// The one-sided textbook operator: places the n' coefficients, scaled by s,
// into the first n' slots of each axis. Complex-valued; kept for checks of
// the asymmetric definition. 1D rings only.
MatrixXcd upsample_literal(const Ring& ring_small, const MatrixXcd& x, int s);

// Pooling for the s-times smaller ring: eigenvalues of m sampled on the
// retained symmetric low-frequency band of each axis.
PoolingSpec truncate_pooling(const PoolingSpec& pooling, int s);

struct StrideSpec {
  int s = 2;
  Ring outer;
  Ring inner;
  PoolingSpec inner_pooling;
};

StrideSpec make_stride_spec(const PoolingSpec& outer_pooling, int s);

// f2 o Up_s o inner o Down_s o f1; equivariant under translations by
// multiples of s.
struct StrideComposite {
  Network f1;
  Network inner;
  Network f2;
  StrideSpec spec;

  double theta_sq() const { return f1.theta_sq() + inner.theta_sq() + f2.theta_sq(); }
  int total_depth() const { return f1.depth() + inner.depth() + f2.depth(); }
};

StrideComposite stride_network(const Network& f1, const Network& inner, const Network& f2,
                               const StrideSpec& spec);
Signal stride_forward(const StrideComposite& comp, const Signal& x);

// Low-frequency embedding of a translationally unique family: G maps T_p x to
// n * c_in constant channels holding vec(x) plus one phase channel
// cos(2 pi (p - i) / n), and `inverse` is the 3-layer no-pooling CNN
// recovering T_p x from G(T_p x). 1D rings only.
struct UniqueEmbedding {
  Ring ring;
  int c_in = 0;
  double Z = 1.0;    // entrywise domain bound, >= 1
  double eps = 0.0;  // cos(2 pi / n), the runner-up phase value
  Network inverse;
  std::vector<Signal> samples;
};

// Validates 0 < x <= Z on every sample and that no sample is a (possibly
// trivial) cyclic shift of another; reports the colliding pair otherwise.
UniqueEmbedding unique_embedding(const std::vector<Signal>& samples, const Ring& ring, int c_in,
                                 double Z);

// G(T_p x) for a canonical sample x.
Signal embed(const UniqueEmbedding& emb, const Signal& x, int p);

}  // namespace cbn
