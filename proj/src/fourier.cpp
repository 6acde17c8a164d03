#include "fourier.h"

#include <numbers>

namespace cbn::fourier {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT on a strided view of `data`.
void fft_radix2(cplx* data, int n, int stride, int sign) {
  // Bit-reversal permutation.
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i * stride], data[j * stride]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = data[(i + k) * stride];
        cplx v = data[(i + k + len / 2) * stride] * w;
        data[(i + k) * stride] = u + v;
        data[(i + k + len / 2) * stride] = u - v;
        w *= wlen;
      }
    }
  }
}

void dft_direct(cplx* data, int n, int stride, int sign) {
  std::vector<cplx> out(n, cplx(0.0, 0.0));
  const double base = sign * 2.0 * std::numbers::pi / n;
  for (int t = 0; t < n; ++t) {
    for (int j = 0; j < n; ++j) {
      const double ang = base * ((static_cast<long long>(t) * j) % n);
      out[t] += data[j * stride] * cplx(std::cos(ang), std::sin(ang));
    }
  }
  for (int t = 0; t < n; ++t) data[t * stride] = out[t];
}

void axis_transform(cplx* data, int n, int stride, int sign, bool force_direct) {
  if (!force_direct && is_pow2(n)) {
    fft_radix2(data, n, stride, sign);
  } else {
    dft_direct(data, n, stride, sign);
  }
}

VectorXcd transform_impl(const Ring& ring, const VectorXcd& x, int sign, bool force_direct) {
  require(ring.valid(), "fourier: invalid ring");
  require(x.size() == ring.n(), "fourier: signal length does not match ring");
  VectorXcd out = x;
  if (ring.axes() == 1) {
    axis_transform(out.data(), ring.dims[0], 1, sign, force_direct);
    return out;
  }
  const int n1 = ring.dims[0], n2 = ring.dims[1];
  // Flat layout is row-major: element (a, b) lives at a*n2 + b.
  for (int a = 0; a < n1; ++a) axis_transform(out.data() + a * n2, n2, 1, sign, force_direct);
  for (int b = 0; b < n2; ++b) axis_transform(out.data() + b, n1, n2, sign, force_direct);
  return out;
}

}  // namespace

VectorXcd transform(const Ring& ring, const VectorXcd& x, int sign) {
  return transform_impl(ring, x, sign, false);
}

VectorXcd transform_direct(const Ring& ring, const VectorXcd& x, int sign) {
  return transform_impl(ring, x, sign, true);
}

}  // namespace cbn::fourier
