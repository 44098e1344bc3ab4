#include "lth/matrix.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "lth/errors.hpp"

namespace lth {

namespace {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const EigenRowMajor>;
using MutMap = Eigen::Map<EigenRowMajor>;

ConstMap map_of(const Matrix& m) {
  return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

Matrix Matrix::from_data(std::size_t rows, std::size_t cols,
                         std::vector<double> values) {
  if (values.size() != rows * cols) {
    throw DimensionError("from_data: value count does not match shape");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < values.size(); ++i) m[i] = values[i];
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dim mismatch");
  Matrix out(a.rows(), b.cols());
  MutMap(out.data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())) = map_of(a) * map_of(b);
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dim mismatch");
  }
  Matrix out(a.rows(), b.rows());
  MutMap(out.data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())) =
      map_of(a) * map_of(b).transpose();
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: inner dim mismatch");
  }
  Matrix out(a.cols(), b.cols());
  MutMap(out.data(), static_cast<Eigen::Index>(out.rows()),
         static_cast<Eigen::Index>(out.cols())) =
      map_of(a).transpose() * map_of(b);
  return out;
}

}  // namespace lth
