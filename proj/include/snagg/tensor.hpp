#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace snagg {

using Shape = std::vector<int>;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes disagree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// A caller violated an API contract (wrong call order, incompatible specs).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A forward pass produced NaN or Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Stored data is malformed (checksum, truncation, bad manifest).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file or directory could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an explicit shape.
struct Tensor {
  Shape shape;
  Vector data;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, Vector d);
  Tensor(Shape s, std::initializer_list<double> values);

  static Tensor scalar(double v);
  static Tensor filled(Shape s, double v);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return static_cast<std::size_t>(data.size()); }

  double& operator[](std::size_t i) { return data[static_cast<Eigen::Index>(i)]; }
  double operator[](std::size_t i) const { return data[static_cast<Eigen::Index>(i)]; }

  /// Rank-2 view; throws DimensionError for other ranks.
  Eigen::Map<const RowMatrix> matrix() const;
  Eigen::Map<RowMatrix> matrix();

  bool all_finite() const { return data.allFinite(); }
};

/// Bitwise equality of shape and data.
bool identical(const Tensor& a, const Tensor& b);

/// Named parameter tensors; iteration order is the lexicographic name order.
using ParamSet = std::map<std::string, Tensor>;

std::size_t parameter_count(const ParamSet& params);

}  // namespace snagg
