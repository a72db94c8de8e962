#pragma once

#include <vector>

namespace dln {

/// Dense row-major square-matrix helpers sized for the small factors used by
/// the matrix-recovery experiments.
namespace linalg {

using Mat = std::vector<double>;  // n x n, row-major

Mat identity(int n);
Mat matmul(const Mat& a, const Mat& b, int n);
Mat transpose(const Mat& a, int n);
double frobenius_norm(const Mat& a);
double inner(const Mat& a, const Mat& b);  // <A, B> = sum a_ij b_ij

struct Svd {
  std::vector<double> singular_values;  // descending
  Mat u;                                // columns are left vectors
  Mat v;                                // columns are right vectors
};

/// Full SVD via cyclic one-sided Jacobi; adequate for n up to a few hundred.
Svd svd(const Mat& a, int n);

/// Best rank-r approximation from the SVD.
Mat truncate_rank(const Svd& decomposition, int n, int rank);

}  // namespace linalg

}  // namespace dln
