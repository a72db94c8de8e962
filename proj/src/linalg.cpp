#include "dln/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dln::linalg {

Mat identity(int n) {
  Mat a(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) a[static_cast<std::size_t>(i) * n + i] = 1.0;
  return a;
}

Mat matmul(const Mat& a, const Mat& b, int n) {
  Mat c(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<std::size_t>(i) * n + k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(k) * n;
      double* crow = c.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Mat transpose(const Mat& a, int n) {
  Mat t(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      t[static_cast<std::size_t>(j) * n + i] = a[static_cast<std::size_t>(i) * n + j];
  return t;
}

double frobenius_norm(const Mat& a) {
  double acc = 0.0;
  for (double v : a) acc += v * v;
  return std::sqrt(acc);
}

double inner(const Mat& a, const Mat& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

Svd svd(const Mat& a, int n) {
  if (static_cast<std::size_t>(n) * n != a.size())
    throw std::invalid_argument("svd: shape mismatch");
  // One-sided Jacobi on the columns of W = A: rotate column pairs until all
  // are mutually orthogonal; column norms are the singular values.
  Mat w = a;
  Mat v = identity(n);
  auto col_dot = [&](const Mat& mat, int p, int q) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc += mat[static_cast<std::size_t>(i) * n + p] *
             mat[static_cast<std::size_t>(i) * n + q];
    return acc;
  };
  auto rotate_cols = [&](Mat& mat, int p, int q, double c, double s) {
    for (int i = 0; i < n; ++i) {
      double& xp = mat[static_cast<std::size_t>(i) * n + p];
      double& xq = mat[static_cast<std::size_t>(i) * n + q];
      const double np = c * xp - s * xq;
      const double nq = s * xp + c * xq;
      xp = np;
      xq = nq;
    }
  };

  const double eps = 1e-14;
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = col_dot(w, p, q);
        const double app = col_dot(w, p, p);
        const double aqq = col_dot(w, q, q);
        off = std::max(off, std::abs(apq) / (std::sqrt(app * aqq) + 1e-300));
        if (std::abs(apq) < eps * std::sqrt(app * aqq) + 1e-300) continue;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_cols(w, p, q, c, s);
        rotate_cols(v, p, q, c, s);
      }
    }
    if (off < eps) break;
  }

  std::vector<double> sigma(n);
  for (int j = 0; j < n; ++j) sigma[j] = std::sqrt(col_dot(w, j, j));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return sigma[i] > sigma[j]; });

  Svd out;
  out.singular_values.resize(n);
  out.u = Mat(static_cast<std::size_t>(n) * n, 0.0);
  out.v = Mat(static_cast<std::size_t>(n) * n, 0.0);
  for (int j = 0; j < n; ++j) {
    const int src = order[j];
    const double s = sigma[src];
    out.singular_values[j] = s;
    for (int i = 0; i < n; ++i) {
      out.v[static_cast<std::size_t>(i) * n + j] =
          v[static_cast<std::size_t>(i) * n + src];
      out.u[static_cast<std::size_t>(i) * n + j] =
          s > 0.0 ? w[static_cast<std::size_t>(i) * n + src] / s : 0.0;
    }
  }
  return out;
}

Mat truncate_rank(const Svd& decomposition, int n, int rank) {
  Mat out(static_cast<std::size_t>(n) * n, 0.0);
  const int keep = std::min<int>(rank, static_cast<int>(decomposition.singular_values.size()));
  for (int k = 0; k < keep; ++k) {
    const double s = decomposition.singular_values[k];
    for (int i = 0; i < n; ++i) {
      const double ui = decomposition.u[static_cast<std::size_t>(i) * n + k];
      if (ui == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        out[static_cast<std::size_t>(i) * n + j] +=
            s * ui * decomposition.v[static_cast<std::size_t>(j) * n + k];
      }
    }
  }
  return out;
}

}  // namespace dln::linalg
