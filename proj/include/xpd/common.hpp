#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xpd {

// Error taxonomy. The CLI maps ConfigError and friends to exit status 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct PreconditionError : Error {
  using Error::Error;
};
struct GenerationError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

// Dense row-major 2-D grid. Used for depth maps, label maps and all of the
// mask-resolution raster quantities.
template <typename T>
class Grid2 {
 public:
  Grid2() = default;
  Grid2(int rows, int cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw ShapeError("Grid2: negative size");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const {
    return data_[static_cast<size_t>(r) * cols_ + c];
  }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  // Replicate (clamp-to-edge) access.
  const T& clamped(int r, int c) const {
    r = r < 0 ? 0 : (r >= rows_ ? rows_ - 1 : r);
    c = c < 0 ? 0 : (c >= cols_ ? cols_ - 1 : c);
    return (*this)(r, c);
  }

  bool inside(int r, int c) const { return r >= 0 && r < rows_ && c >= 0 && c < cols_; }
  bool same_shape(const Grid2<auto>& o) const { return rows_ == o.rows() && cols_ == o.cols(); }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Grid2&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

using DepthMap = Grid2<double>;
using LabelMap = Grid2<int32_t>;
using RealMap = Grid2<double>;
using BoolMap = Grid2<uint8_t>;

}  // namespace xpd
