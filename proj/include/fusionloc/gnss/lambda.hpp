#pragma once

#include "fusionloc/core/types.hpp"

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace fusionloc::gnss {

/// Integer least squares: decorrelating reduction followed by a depth-first
/// search with a shrinking ellipsoid (modified LAMBDA). Returns the best
/// `candidates` integer vectors minimizing (a - z)^T Q^-1 (a - z).
struct IntegerSearchResult {
  std::vector<VecX> candidates;  // sorted by residual
  std::vector<double> residuals;
  double ratio = 0.0;  // second best / best
  bool ok = false;     // false when Q is not SPD or the search cap was hit
  long iterations = 0;
};

namespace detail {

inline double round_half_up(double x) { return std::floor(x + 0.5); }
inline double sgn(double x) { return x <= 0.0 ? -1.0 : 1.0; }

// Q = L^T diag(D) L with L unit lower triangular.
inline bool ltdl(const MatX& Q, MatX& L, VecX& D) {
  const int n = static_cast<int>(Q.rows());
  MatX A = Q;
  L = MatX::Zero(n, n);
  D = VecX::Zero(n);
  for (int i = n - 1; i >= 0; --i) {
    D(i) = A(i, i);
    if (!(D(i) > 0.0)) return false;
    const double a = std::sqrt(D(i));
    for (int j = 0; j <= i; ++j) L(i, j) = A(i, j) / a;
    for (int j = 0; j <= i - 1; ++j)
      for (int k = 0; k <= j; ++k) A(j, k) -= L(i, k) * L(i, j);
    for (int j = 0; j <= i; ++j) L(i, j) /= L(i, i);
  }
  return true;
}

inline void gauss(int n, MatX& L, MatX& Z, int i, int j) {
  const double mu = round_half_up(L(i, j));
  if (mu == 0.0) return;
  for (int k = i; k < n; ++k) L(k, j) -= mu * L(k, i);
  for (int k = 0; k < n; ++k) Z(k, j) -= mu * Z(k, i);
}

inline void permute(int n, MatX& L, VecX& D, int j, double del, MatX& Z) {
  const double eta = D(j) / del;
  const double lam = D(j + 1) * L(j + 1, j) / del;
  D(j) = eta * D(j + 1);
  D(j + 1) = del;
  for (int k = 0; k <= j - 1; ++k) {
    const double a0 = L(j, k), a1 = L(j + 1, k);
    L(j, k) = -L(j + 1, j) * a0 + a1;
    L(j + 1, k) = eta * a0 + lam * a1;
  }
  L(j + 1, j) = lam;
  for (int k = j + 2; k < n; ++k) std::swap(L(k, j), L(k, j + 1));
  for (int k = 0; k < n; ++k) std::swap(Z(k, j), Z(k, j + 1));
}

inline void reduction(int n, MatX& L, VecX& D, MatX& Z) {
  int j = n - 2, k = n - 2;
  while (j >= 0) {
    if (j <= k)
      for (int i = j + 1; i < n; ++i) gauss(n, L, Z, i, j);
    const double del = D(j) + L(j + 1, j) * L(j + 1, j) * D(j + 1);
    if (del + 1e-6 < D(j + 1)) {
      permute(n, L, D, j, del, Z);
      k = j;
      j = n - 2;
    } else {
      --j;
    }
  }
}

// Depth-first enumeration in the decorrelated space keeping the m best.
inline bool search(int n, int m, const MatX& L, const VecX& D, const VecX& zs, std::vector<VecX>& zn,
                   std::vector<double>& s, long cap, long& iterations) {
  MatX S = MatX::Zero(n, n);
  VecX dist = VecX::Zero(n), zb = VecX::Zero(n), z = VecX::Zero(n), step = VecX::Zero(n);
  double maxdist = std::numeric_limits<double>::max();
  int nn = 0, imax = 0;
  zn.assign(m, VecX::Zero(n));
  s.assign(m, 0.0);
  int k = n - 1;
  dist(k) = 0.0;
  zb(k) = zs(k);
  z(k) = round_half_up(zb(k));
  double y = zb(k) - z(k);
  step(k) = sgn(y);
  long c = 0;
  for (; c < cap; ++c) {
    const double newdist = dist(k) + y * y / D(k);
    if (newdist < maxdist) {
      if (k != 0) {
        dist(--k) = newdist;
        for (int i = 0; i <= k; ++i) S(k, i) = S(k + 1, i) + (z(k + 1) - zb(k + 1)) * L(k + 1, i);
        zb(k) = zs(k) + S(k, k);
        z(k) = round_half_up(zb(k));
        y = zb(k) - z(k);
        step(k) = sgn(y);
      } else {
        if (nn < m) {
          if (nn == 0 || newdist > s[imax]) imax = nn;
          zn[nn] = z;
          s[nn++] = newdist;
        } else {
          if (newdist < s[imax]) {
            zn[imax] = z;
            s[imax] = newdist;
            imax = 0;
            for (int i = 0; i < m; ++i)
              if (s[imax] < s[i]) imax = i;
          }
          maxdist = s[imax];
        }
        z(0) += step(0);
        y = zb(0) - z(0);
        step(0) = -step(0) - sgn(step(0));
      }
    } else {
      if (k == n - 1) break;
      ++k;
      z(k) += step(k);
      y = zb(k) - z(k);
      step(k) = -step(k) - sgn(step(k));
    }
  }
  iterations = c;
  zn.resize(nn);
  s.resize(nn);
  for (int i = 0; i < nn; ++i)
    for (int j = i + 1; j < nn; ++j)
      if (s[j] < s[i]) {
        std::swap(s[i], s[j]);
        std::swap(zn[i], zn[j]);
      }
  return c < cap;
}

}  // namespace detail

inline IntegerSearchResult integer_search(const VecX& a, const MatX& Q, int candidates = 2, long cap = 100000) {
  IntegerSearchResult out;
  const int n = static_cast<int>(a.size());
  if (n == 0 || Q.rows() != n || Q.cols() != n) fail(ErrorKind::input, "integer search dimension mismatch");
  MatX L;
  VecX D;
  if (!detail::ltdl(Q, L, D)) return out;
  MatX Z = MatX::Identity(n, n);
  detail::reduction(n, L, D, Z);
  const VecX z = Z.transpose() * a;
  std::vector<VecX> zn;
  std::vector<double> s;
  const bool complete = detail::search(n, candidates, L, D, z, zn, s, cap, out.iterations);
  if (!complete || zn.empty()) return out;
  // Back-transform: a = Z^-T z (Z is unimodular, so the result is integral).
  const Eigen::PartialPivLU<MatX> lu(Z.transpose());
  for (std::size_t i = 0; i < zn.size(); ++i) {
    VecX v = lu.solve(zn[i]);
    for (int j = 0; j < n; ++j) v(j) = std::round(v(j));
    out.candidates.push_back(v);
    out.residuals.push_back(s[i]);
  }
  out.ratio = out.residuals.size() >= 2
                  ? (out.residuals[0] > 0.0 ? out.residuals[1] / out.residuals[0] : std::numeric_limits<double>::infinity())
                  : 0.0;
  out.ok = true;
  return out;
}

}  // namespace fusionloc::gnss
