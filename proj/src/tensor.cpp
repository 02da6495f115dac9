#include "snagg/tensor.hpp"

#include <cstring>
#include <sstream>

namespace snagg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(Vector::Zero(static_cast<Eigen::Index>(numel(shape)))) {}

Tensor::Tensor(Shape s, Vector d) : shape(std::move(s)), data(std::move(d)) {
  if (numel(shape) != static_cast<std::size_t>(data.size()))
    throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(data.size()) +
                         " values");
}

Tensor::Tensor(Shape s, std::initializer_list<double> values) : shape(std::move(s)) {
  data.resize(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double v : values) data[i++] = v;
  if (numel(shape) != values.size())
    throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                         " values");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::filled(Shape s, double v) {
  Tensor t(std::move(s));
  t.data.setConstant(v);
  return t;
}

Eigen::Map<const RowMatrix> Tensor::matrix() const {
  if (rank() != 2) throw DimensionError("expected a rank-2 tensor, got " + to_string(shape));
  return {data.data(), shape[0], shape[1]};
}

Eigen::Map<RowMatrix> Tensor::matrix() {
  if (rank() != 2) throw DimensionError("expected a rank-2 tensor, got " + to_string(shape));
  return {data.data(), shape[0], shape[1]};
}

bool identical(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape || a.data.size() != b.data.size()) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(double) * static_cast<std::size_t>(a.data.size())) == 0;
}

std::size_t parameter_count(const ParamSet& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

}  // namespace snagg
