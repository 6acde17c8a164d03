#pragma once

#include "common.h"

namespace cbn::fourier {

// Unnormalized transform sum_j x_j e^{sign * 2 pi i <t,j> / n}, applied along
// every ring axis. Radix-2 FFT when an axis length is a power of two, direct
// O(n^2) sum otherwise.
VectorXcd transform(const Ring& ring, const VectorXcd& x, int sign);

// Analysis DFT (e^{-2 pi i} kernel).
inline VectorXcd analysis(const Ring& ring, const VectorXcd& x) {
  return transform(ring, x, -1);
}

// Inverse of analysis: (1/n) e^{+2 pi i} kernel.
inline VectorXcd synthesis(const Ring& ring, const VectorXcd& x) {
  return transform(ring, x, +1) / static_cast<double>(ring.n());
}

inline VectorXcd analysis_real(const Ring& ring, const VectorXd& x) {
  return analysis(ring, x.cast<cplx>());
}

// Eigenvalues of the circulant generated by v under the correlation
// convention: lambda_t = sum_j v_j e^{+2 pi i <t,j> / n}.
inline VectorXcd circulant_eigenvalues(const Ring& ring, const VectorXd& v) {
  return transform(ring, v.cast<cplx>(), +1);
}

// Direct transforms used as test oracles for the dispatching implementation.
VectorXcd transform_direct(const Ring& ring, const VectorXcd& x, int sign);

}  // namespace cbn::fourier
