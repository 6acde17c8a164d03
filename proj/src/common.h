#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbn {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using Eigen::VectorXi;
using cplx = std::complex<double>;

// A signal is n_total x channels, spatial index flattened row-major over the
// ring axes. The channel-blocked vectorization used by dense TE matrices is
// the column-major flatten of this matrix (channel 0's pixels first).
using Signal = MatrixXd;

// Relative singular-value threshold below which a value counts as zero.
inline constexpr double kTauRank = 1e-6;
// Pooling invertibility threshold on |m_tilde_t|.
inline constexpr double kEpsInv = 1e-9;
// Proximity flag threshold for pooled pre-activations at ReLU kinks.
inline constexpr double kEpsKink = 1e-8;

class Error : public std::runtime_error {
 public:
  enum Kind { invalid_argument, runtime_failure };
  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

[[noreturn]] inline void fail_invalid(const std::string& msg) {
  throw Error(Error::invalid_argument, msg);
}

[[noreturn]] inline void fail_runtime(const std::string& msg) {
  throw Error(Error::runtime_failure, msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail_invalid(msg);
}

// Cyclic grid in one or two dimensions. Spatial and frequency positions share
// the same flat row-major indexing (axis 0 slowest). Flat frequency index 0 is
// the constant frequency; reports expose 1-based per-axis indices.
struct Ring {
  std::vector<int> dims;

  static Ring d1(int n) { return Ring{{n}}; }
  static Ring d2(int n1, int n2) { return Ring{{n1, n2}}; }

  int axes() const { return static_cast<int>(dims.size()); }

  int n() const {
    int total = 1;
    for (int d : dims) total *= d;
    return total;
  }

  bool valid() const {
    if (dims.empty() || dims.size() > 2) return false;
    for (int d : dims) {
      if (d < 1) return false;
    }
    return true;
  }

  std::array<int, 2> coords(int flat) const {
    if (axes() == 1) return {flat, 0};
    return {flat / dims[1], flat % dims[1]};
  }

  int flat(int a0, int a1 = 0) const {
    if (axes() == 1) return a0;
    return a0 * dims[1] + a1;
  }

  // Flat index of the coordinate-wise sum (mod axis sizes); the translation
  // group operation on flat indices.
  int add(int a, int b) const {
    auto ca = coords(a), cb = coords(b);
    if (axes() == 1) return (ca[0] + cb[0]) % dims[0];
    return flat((ca[0] + cb[0]) % dims[0], (ca[1] + cb[1]) % dims[1]);
  }

  int negate(int a) const {
    auto c = coords(a);
    if (axes() == 1) return (dims[0] - c[0]) % dims[0];
    return flat((dims[0] - c[0]) % dims[0], (dims[1] - c[1]) % dims[1]);
  }

  int sub(int a, int b) const { return add(a, negate(b)); }

  // Frequency paired with t under complex conjugation of the Fourier basis.
  int conj_partner(int t) const { return negate(t); }

  bool operator==(const Ring& other) const { return dims == other.dims; }
  bool operator!=(const Ring& other) const { return dims != other.dims; }
};

// Cyclic translation by flat offset p: (T_p x)_i = x_{i - p}.
inline Signal translate(const Ring& ring, const Signal& x, int p) {
  Signal out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) out.row(ring.add(i, p)) = x.row(i);
  return out;
}

}  // namespace cbn
