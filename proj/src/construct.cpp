#include "construct.h"

#include <cmath>
#include <set>
#include <sstream>

#include "fourier.h"

namespace cbn {

namespace {

double real_m0(const PoolingSpec& pooling) {
  const cplx m0 = pooling.m_tilde(0);
  require(std::abs(m0.imag()) <= 1e-9, "pooling eigenvalue at the constant frequency is not real");
  require(std::abs(m0.real()) > kEpsInv, "pooling kills the constant frequency");
  return m0.real();
}

bool pooling_is_delta(const PoolingSpec& pooling) {
  VectorXd delta = VectorXd::Zero(pooling.ring.n());
  delta(0) = 1.0;
  return (pooling.m - delta).cwiseAbs().maxCoeff() == 0.0;
}

}  // namespace

Network identity_network(const Ring& ring, const PoolingSpec& pooling, int channels, int depth,
                         double K, const std::vector<std::vector<int>>* support,
                         double* condition_number) {
  require(ring.valid() && ring == pooling.ring, "identity_network: ring mismatch");
  require(channels >= 1, "identity_network: channels must be positive");
  require(depth >= 1, "identity_network: depth must be positive");
  require(K >= 0.0, "identity_network: domain bound must be nonnegative");
  const int n = ring.n();
  const VectorXd mt = pooling.mt_abs();
  require(mt.minCoeff() > kEpsInv, "identity_network: pooling is not invertible");
  if (condition_number) *condition_number = mt.maxCoeff() / mt.minCoeff();
  if (support) {
    require(static_cast<int>(support->size()) == channels,
            "identity_network: one support set per channel required");
    for (const auto& I : *support) {
      require(!I.empty(), "identity_network: empty frequency support");
      std::set<int> seen(I.begin(), I.end());
      for (int t : I) {
        require(t >= 0 && t < n, "identity_network: frequency index out of range");
        require(seen.count(ring.negate(t)) == 1,
                "identity_network: support must be closed under frequency negation");
      }
    }
  }

  ConvFilter layer = zero_filter(ring, channels, channels);
  if (pooling.is_identity_kind() && !support) {
    for (int c = 0; c < channels; ++c) layer.taps[0](c, c) = 1.0;
  } else {
    for (int c = 0; c < channels; ++c) {
      VectorXcd ghat = VectorXcd::Zero(n);
      if (support) {
        for (int t : (*support)[c]) ghat(t) = 1.0 / pooling.m_tilde(t);
      } else {
        for (int t = 0; t < n; ++t) ghat(t) = 1.0 / pooling.m_tilde(t);
      }
      VectorXcd taps = fourier::synthesis(ring, ghat);
      require(taps.imag().cwiseAbs().maxCoeff() <= 1e-9,
              "identity_network: inverse filter came out complex");
      for (int j = 0; j < n; ++j) layer.taps[j](c, c) = taps(j).real();
    }
  }

  Network net;
  net.ring = ring;
  net.pooling = pooling;
  net.final_pool = true;
  net.layers.assign(depth, layer);
  if (depth >= 2 && K > 0.0) {
    const double shift = K / real_m0(pooling);
    net.layers.front().bias = VectorXd::Constant(channels, shift);
    net.layers.back().bias = VectorXd::Constant(channels, -shift);
  }
  net.validate();
  return net;
}

Network parallel_sum(const Network& a, const Network& b) {
  require(a.ring == b.ring, "parallel_sum: ring mismatch");
  require((a.pooling.m - b.pooling.m).cwiseAbs().maxCoeff() == 0.0,
          "parallel_sum: pooling mismatch");
  require(a.depth() == b.depth(), "parallel_sum: depth mismatch");
  require(a.depth() >= 2, "parallel_sum: needs at least one hidden layer for channel stacking");
  require(a.c_in() == b.c_in(), "parallel_sum: input channel mismatch");
  require(a.c_out() == b.c_out(), "parallel_sum: output channel mismatch");
  require(a.final_pool == b.final_pool, "parallel_sum: final pooling flag mismatch");
  const int L = a.depth();
  const int n = a.ring.n();

  Network out;
  out.ring = a.ring;
  out.pooling = a.pooling;
  out.final_pool = a.final_pool;
  out.seed = a.seed;
  for (int l = 0; l < L; ++l) {
    const ConvFilter& fa = a.layers[l];
    const ConvFilter& fb = b.layers[l];
    int rows, cols;
    if (l == 0) {
      rows = fa.c_out() + fb.c_out();
      cols = fa.c_in();
    } else if (l == L - 1) {
      rows = fa.c_out();
      cols = fa.c_in() + fb.c_in();
    } else {
      rows = fa.c_out() + fb.c_out();
      cols = fa.c_in() + fb.c_in();
    }
    ConvFilter f = zero_filter(a.ring, rows, cols);
    for (int j = 0; j < n; ++j) {
      if (l == 0) {
        f.taps[j].topRows(fa.c_out()) = fa.taps[j];
        f.taps[j].bottomRows(fb.c_out()) = fb.taps[j];
      } else if (l == L - 1) {
        f.taps[j].leftCols(fa.c_in()) = fa.taps[j];
        f.taps[j].rightCols(fb.c_in()) = fb.taps[j];
      } else {
        f.taps[j].topLeftCorner(fa.c_out(), fa.c_in()) = fa.taps[j];
        f.taps[j].bottomRightCorner(fb.c_out(), fb.c_in()) = fb.taps[j];
      }
    }
    if (l == L - 1) {
      f.bias = fa.bias + fb.bias;
    } else {
      f.bias.head(fa.c_out()) = fa.bias;
      f.bias.tail(fb.c_out()) = fb.bias;
    }
    out.layers.push_back(std::move(f));
  }
  out.validate();
  return out;
}

Network compose(const Network& first, const Network& second) {
  require(first.ring == second.ring, "compose: ring mismatch");
  require((first.pooling.m - second.pooling.m).cwiseAbs().maxCoeff() == 0.0,
          "compose: pooling mismatch");
  require(first.c_out() == second.c_in(), "compose: interface channel mismatch");
  require(first.final_pool || pooling_is_delta(first.pooling),
          "compose: first network must end in pooling so the interface layer matches");
  Network out;
  out.ring = first.ring;
  out.pooling = first.pooling;
  out.final_pool = second.final_pool;
  out.seed = first.seed;
  out.layers = first.layers;
  out.layers.insert(out.layers.end(), second.layers.begin(), second.layers.end());
  out.validate();
  return out;
}

void bump_output_shift(Network& net, const VectorXd& kappa) {
  require(kappa.size() == net.c_out(), "bump_output_shift: shift size mismatch");
  if (net.final_pool) {
    net.layers.back().bias += kappa / real_m0(net.pooling);
  } else {
    net.layers.back().bias += kappa;
  }
}

void compensate_input_shift(Network& net, const VectorXd& gamma) {
  require(gamma.size() == net.c_in(), "compensate_input_shift: shift size mismatch");
  MatrixXd b0 = MatrixXd::Zero(net.layers.front().c_out(), net.c_in());
  for (const auto& tap : net.layers.front().taps) b0 += tap;
  net.layers.front().bias -= b0 * gamma;
}

void FCNetwork::validate() const {
  require(!A.empty(), "fc network: no layers");
  require(A.size() == d.size(), "fc network: bias count mismatch");
  for (size_t l = 0; l < A.size(); ++l) {
    require(d[l].size() == A[l].rows(), "fc network: bias size mismatch");
    if (l > 0) require(A[l].cols() == A[l - 1].rows(), "fc network: dimension chaining broken");
  }
}

VectorXd fc_forward(const FCNetwork& fc, const VectorXd& x) {
  fc.validate();
  require(x.size() == fc.input_dim(), "fc_forward: input size mismatch");
  VectorXd h = x;
  for (int l = 0; l < fc.depth(); ++l) {
    h = fc.A[l] * h + fc.d[l];
    if (l + 1 < fc.depth()) h = h.cwiseMax(0.0);
  }
  return h;
}

Network fc_to_cnn(const FCNetwork& fc, const Ring& ring, int c_in) {
  fc.validate();
  require(ring.valid(), "fc_to_cnn: invalid ring");
  require(c_in >= 1, "fc_to_cnn: channels must be positive");
  const int n = ring.n();
  require(fc.input_dim() == n * c_in,
          "fc_to_cnn: fc input dimension must equal pixel count times channels");

  Network net;
  net.ring = ring;
  net.pooling = pooling_operator(ring, PoolingSpec::identity, 0.0);
  net.final_pool = false;
  ConvFilter l1 = zero_filter(ring, n * c_in, c_in);
  for (int s = 0; s < c_in; ++s)
    for (int j = 0; j < n; ++j) l1.taps[j](s * n + j, s) = 1.0;
  net.layers.push_back(std::move(l1));
  for (int l = 0; l < fc.depth(); ++l) {
    ConvFilter f = zero_filter(ring, static_cast<int>(fc.A[l].rows()),
                               static_cast<int>(fc.A[l].cols()));
    f.taps[0] = fc.A[l];
    f.bias = fc.d[l];
    net.layers.push_back(std::move(f));
  }
  net.validate();
  return net;
}

void check_positive_domain(const Signal& x) {
  const double lo = x.minCoeff();
  if (lo <= 0.0) {
    std::ostringstream os;
    os << "input has non-positive entries (min " << lo
       << "); shift the domain up by more than " << -lo << " before compiling";
    fail_invalid(os.str());
  }
}

Ring downsampled_ring(const Ring& ring, int s) {
  require(s >= 1, "downsample: stride must be positive");
  Ring small;
  for (int d : ring.dims) {
    require(d % s == 0, "downsample: stride must divide every axis length");
    require(d / s >= 1, "downsample: stride exceeds the grid");
    small.dims.push_back(d / s);
  }
  return small;
}

Signal downsample(const Ring& ring, const Signal& x, int s) {
  require(x.rows() == ring.n(), "downsample: signal size mismatch");
  const Ring small = downsampled_ring(ring, s);
  Signal out(small.n(), x.cols());
  for (int f = 0; f < small.n(); ++f) {
    auto c = small.coords(f);
    out.row(f) = x.row(ring.flat(c[0] * s, c[1] * s));
  }
  return out;
}

namespace {

struct SlotWeight {
  int slot;
  double w;
};

// Where a small-ring axis frequency lands on the big axis: conjugate pairs
// keep their mirrored slots, a shared (even-size) Nyquist entry is split.
std::vector<SlotWeight> axis_slots(int t, int n_small, int n_big) {
  if (2 * t == n_small) return {{n_small / 2, 0.5}, {n_big - n_small / 2, 0.5}};
  if (2 * t < n_small) return {{t, 1.0}};
  return {{t + n_big - n_small, 1.0}};
}

}  // namespace

Signal upsample(const Ring& ring_small, const Signal& x, int s) {
  require(s >= 1, "upsample: stride must be positive");
  require(x.rows() == ring_small.n(), "upsample: signal size mismatch");
  if (s == 1) return x;
  Ring big;
  for (int d : ring_small.dims) big.dims.push_back(d * s);
  const double scale = std::pow(static_cast<double>(s), ring_small.axes());
  Signal out(big.n(), x.cols());
  for (int c = 0; c < x.cols(); ++c) {
    VectorXcd yh = fourier::analysis_real(ring_small, x.col(c));
    VectorXcd xh = VectorXcd::Zero(big.n());
    for (int t = 0; t < ring_small.n(); ++t) {
      auto tc = ring_small.coords(t);
      auto s0 = axis_slots(tc[0], ring_small.dims[0], big.dims[0]);
      if (ring_small.axes() == 1) {
        for (const auto& a : s0) xh(a.slot) += scale * a.w * yh(t);
      } else {
        auto s1 = axis_slots(tc[1], ring_small.dims[1], big.dims[1]);
        for (const auto& a : s0)
          for (const auto& b : s1) xh(big.flat(a.slot, b.slot)) += scale * a.w * b.w * yh(t);
      }
    }
    out.col(c) = fourier::synthesis(big, xh).real();
  }
  return out;
}

MatrixXcd upsample_literal(const Ring& ring_small, const MatrixXcd& x, int s) {
  require(ring_small.axes() == 1, "upsample_literal: 1D rings only");
  require(s >= 1, "upsample_literal: stride must be positive");
  require(x.rows() == ring_small.n(), "upsample_literal: signal size mismatch");
  const int np = ring_small.n();
  const Ring big = Ring::d1(np * s);
  MatrixXcd out(big.n(), x.cols());
  for (int c = 0; c < x.cols(); ++c) {
    VectorXcd yh = fourier::analysis(ring_small, x.col(c));
    VectorXcd xh = VectorXcd::Zero(big.n());
    for (int t = 0; t < np; ++t) xh(t) = static_cast<double>(s) * yh(t);
    out.col(c) = fourier::synthesis(big, xh);
  }
  return out;
}

PoolingSpec truncate_pooling(const PoolingSpec& pooling, int s) {
  require(s >= 2, "truncate_pooling: stride must be at least 2");
  Ring small;
  for (int d : pooling.ring.dims) {
    require(d % s == 0, "truncate_pooling: stride must divide the grid size");
    require(d / s >= 1, "truncate_pooling: stride exceeds the grid");
    small.dims.push_back(d / s);
  }
  VectorXcd mt_small(small.n());
  for (int t = 0; t < small.n(); ++t) {
    auto tc = small.coords(t);
    int b0 = 2 * tc[0] <= small.dims[0] ? tc[0] : tc[0] + pooling.ring.dims[0] - small.dims[0];
    int flat_big;
    if (small.axes() == 1) {
      flat_big = b0;
    } else {
      int b1 = 2 * tc[1] <= small.dims[1] ? tc[1] : tc[1] + pooling.ring.dims[1] - small.dims[1];
      flat_big = pooling.ring.flat(b0, b1);
    }
    mt_small(t) = pooling.m_tilde(flat_big);
  }
  VectorXcd taps = fourier::synthesis(small, mt_small);
  require(taps.imag().cwiseAbs().maxCoeff() <= 1e-9,
          "truncate_pooling: truncated filter came out complex");
  VectorXd m_small = taps.real();
  return pooling_operator(small, PoolingSpec::custom, 0.0, &m_small);
}

StrideSpec make_stride_spec(const PoolingSpec& outer_pooling, int s) {
  StrideSpec spec;
  spec.s = s;
  spec.outer = outer_pooling.ring;
  spec.inner_pooling = truncate_pooling(outer_pooling, s);
  spec.inner = spec.inner_pooling.ring;
  return spec;
}

StrideComposite stride_network(const Network& f1, const Network& inner, const Network& f2,
                               const StrideSpec& spec) {
  require(spec.s >= 2, "stride_network: stride must be at least 2");
  require(f1.ring == spec.outer && f2.ring == spec.outer, "stride_network: outer ring mismatch");
  require(inner.ring == spec.inner, "stride_network: inner ring mismatch");
  require(inner.c_in() == f1.c_out(), "stride_network: f1 -> inner channel mismatch");
  require(f2.c_in() == inner.c_out(), "stride_network: inner -> f2 channel mismatch");
  require((inner.pooling.m - spec.inner_pooling.m).cwiseAbs().maxCoeff() <= 1e-12,
          "stride_network: inner network must use the truncated pooling");
  return StrideComposite{f1, inner, f2, spec};
}

Signal stride_forward(const StrideComposite& comp, const Signal& x) {
  Signal y = evaluate(comp.f1, x);
  y = downsample(comp.spec.outer, y, comp.spec.s);
  y = evaluate(comp.inner, y);
  y = upsample(comp.spec.inner, y, comp.spec.s);
  return evaluate(comp.f2, y);
}

UniqueEmbedding unique_embedding(const std::vector<Signal>& samples, const Ring& ring, int c_in,
                                 double Z) {
  require(ring.valid() && ring.axes() == 1, "unique_embedding: 1D rings only");
  const int n = ring.n();
  require(n >= 2, "unique_embedding: need at least two pixels");
  require(c_in >= 1, "unique_embedding: channels must be positive");
  require(Z >= 1.0, "unique_embedding: domain bound must be at least 1");
  require(!samples.empty(), "unique_embedding: no samples");
  for (size_t i = 0; i < samples.size(); ++i) {
    require(samples[i].rows() == n && samples[i].cols() == c_in,
            "unique_embedding: sample shape mismatch");
    require(samples[i].minCoeff() > 0.0, "unique_embedding: samples must be entrywise positive");
    require(samples[i].maxCoeff() <= Z + 1e-12,
            "unique_embedding: sample exceeds the domain bound");
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    for (size_t j = i; j < samples.size(); ++j) {
      for (int p = 0; p < n; ++p) {
        if (i == j && p == 0) continue;
        if ((samples[i] - translate(ring, samples[j], p)).cwiseAbs().maxCoeff() <= 1e-12) {
          std::ostringstream os;
          os << "translational uniqueness violated: sample " << i << " equals sample " << j
             << " shifted by " << p;
          fail_invalid(os.str());
        }
      }
    }
  }

  UniqueEmbedding emb;
  emb.ring = ring;
  emb.c_in = c_in;
  emb.Z = Z;
  emb.eps = std::cos(2.0 * std::acos(-1.0) / n);
  emb.samples = samples;

  const int nc = n * c_in;
  Network inv;
  inv.ring = ring;
  inv.pooling = pooling_operator(ring, PoolingSpec::identity, 0.0);
  inv.final_pool = false;

  // Pass the payload channels through; keep the phase channel positive only
  // at the encoded position by subtracting the runner-up phase value.
  ConvFilter l1 = zero_filter(ring, nc + 1, nc + 1);
  for (int u = 0; u <= nc; ++u) l1.taps[0](u, u) = 1.0;
  l1.bias(nc) = -emb.eps;
  inv.layers.push_back(std::move(l1));

  // Gate every payload channel on the position marker: only the encoded pixel
  // survives the -Z bias.
  ConvFilter l2 = zero_filter(ring, nc, nc + 1);
  for (int u = 0; u < nc; ++u) {
    l2.taps[0](u, u) = 1.0;
    l2.taps[0](u, nc) = Z / (1.0 - emb.eps);
  }
  l2.bias = VectorXd::Constant(nc, -Z);
  inv.layers.push_back(std::move(l2));

  // Scatter the payload concentrated at one pixel back into the translated
  // signal.
  ConvFilter l3 = zero_filter(ring, c_in, nc);
  for (int s = 0; s < c_in; ++s)
    for (int j = 0; j < n; ++j) l3.taps[j](s, s * n + ring.negate(j)) = 1.0;
  inv.layers.push_back(std::move(l3));
  inv.validate();
  emb.inverse = std::move(inv);
  return emb;
}

Signal embed(const UniqueEmbedding& emb, const Signal& x, int p) {
  const int n = emb.ring.n();
  require(x.rows() == n && x.cols() == emb.c_in, "embed: sample shape mismatch");
  require(p >= 0 && p < n, "embed: shift out of range");
  const int nc = n * emb.c_in;
  Signal out(n, nc + 1);
  for (int s = 0; s < emb.c_in; ++s)
    for (int i = 0; i < n; ++i) out.col(s * n + i).setConstant(x(i, s));
  const double two_pi = 2.0 * std::acos(-1.0);
  for (int q = 0; q < n; ++q) out(q, nc) = std::cos(two_pi * (p - q) / n);
  return out;
}

}  // namespace cbn
