#pragma once

// Small dense linear algebra for state/noise dimensions up to kMaxDim.
// Storage is inline (no heap), which matters in the per-step inner loops.

#include <array>
#include <cassert>

#include <Eigen/Dense>

namespace mscore {

inline constexpr int kMaxDim = 4;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, kMaxDim>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

/// Third-order tensor T^{i,p,q} stored as slices: slice[i](p, q).
struct Tensor3 {
  int dim = 0;
  std::array<Mat, kMaxDim> slice;

  static Tensor3 Zero(int m) {
    Tensor3 t;
    t.dim = m;
    for (int i = 0; i < m; ++i) t.slice[i] = Mat::Zero(m, m);
    return t;
  }

  double operator()(int i, int p, int q) const { return slice[i](p, q); }
  double& operator()(int i, int p, int q) { return slice[i](p, q); }

  Tensor3& operator+=(const Tensor3& o) {
    for (int i = 0; i < dim; ++i) slice[i] += o.slice[i];
    return *this;
  }

  double max_abs() const {
    double r = 0.0;
    for (int i = 0; i < dim; ++i) r = std::max(r, slice[i].cwiseAbs().maxCoeff());
    return r;
  }
};

/// One m-by-k matrix per noise channel l (Malliavin derivative direction).
struct ChannelFamily {
  int channels = 0;
  std::array<Mat, kMaxDim> per_channel;

  Mat& operator[](int l) { return per_channel[l]; }
  const Mat& operator[](int l) const { return per_channel[l]; }

  double max_abs() const {
    double r = 0.0;
    for (int l = 0; l < channels; ++l) r = std::max(r, per_channel[l].cwiseAbs().maxCoeff());
    return r;
  }
};

/// (T o v)^{i,p} = sum_q T^{i,p,q} v^q : contracts the last index.
inline Mat contract_last(const Tensor3& t, const Vec& v) {
  Mat r(t.dim, t.slice[0].rows());
  for (int i = 0; i < t.dim; ++i) r.row(i) = (t.slice[i] * v).transpose();
  return r;
}

/// (T(Y (x) Y))^{i,p,q} = sum_{j,k} T^{i,j,k} Y^{j,p} Y^{k,q}.
inline Tensor3 sandwich(const Tensor3& t, const Mat& y) {
  Tensor3 r;
  r.dim = t.dim;
  for (int i = 0; i < t.dim; ++i) r.slice[i] = y.transpose() * t.slice[i] * y;
  return r;
}

/// (A T)^{i,p,q} = sum_j A^{i,j} T^{j,p,q}.
inline Tensor3 left_multiply(const Mat& a, const Tensor3& t) {
  Tensor3 r = Tensor3::Zero(t.dim);
  for (int i = 0; i < t.dim; ++i)
    for (int j = 0; j < t.dim; ++j)
      if (a(i, j) != 0.0) r.slice[i] += a(i, j) * t.slice[j];
  return r;
}

/// Matrix of slice index q: (T^{(q)})^{i,p} = T^{i,p,q}.
inline Mat last_index_slice(const Tensor3& t, int q) {
  Mat r(t.dim, t.dim);
  for (int i = 0; i < t.dim; ++i) r.row(i) = t.slice[i].col(q).transpose();
  return r;
}

inline double max_abs(const Mat& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

}  // namespace mscore
