#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "avsep/axes.hpp"
#include "avsep/errors.hpp"

namespace avsep {

// Accounting for tensor storage. Tracks live and peak bytes and enforces an
// optional budget, so out-of-memory behavior is reproducible regardless of
// the host machine.
class MemoryMeter {
 public:
  static MemoryMeter& instance() {
    static MemoryMeter meter;
    return meter;
  }

  void on_alloc(std::size_t bytes) {
    if (budget_ > 0 && live_ + bytes > budget_) {
      throw MemoryBudgetError("tensor allocation of " + std::to_string(bytes) +
                              " bytes exceeds budget of " +
                              std::to_string(budget_) + " (live " +
                              std::to_string(live_) + ")");
    }
    live_ += bytes;
    peak_ = std::max(peak_, live_);
  }
  void on_free(std::size_t bytes) { live_ -= std::min(bytes, live_); }

  void reset_peak() { peak_ = live_; }
  void set_budget(std::size_t bytes) { budget_ = bytes; }  // 0 disables
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  std::size_t budget() const { return budget_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t budget_ = 0;
};

namespace detail {
inline std::shared_ptr<double[]> alloc_tracked(std::size_t n) {
  MemoryMeter::instance().on_alloc(n * sizeof(double));
  return std::shared_ptr<double[]>(new double[n], [n](double* p) {
    MemoryMeter::instance().on_free(n * sizeof(double));
    delete[] p;
  });
}
}  // namespace detail

// Dense multi-axis array of doubles with named axes, row-major in axis order.
// Copies share storage; operations produce fresh tensors.
class Tensor {
 public:
  Tensor() = default;

  Tensor(AxisList axes, std::vector<std::size_t> dims)
      : axes_(std::move(axes)), dims_(std::move(dims)) {
    if (axes_.size() != dims_.size())
      throw DimensionError("axis/dim count mismatch");
    for (std::size_t i = 0; i < axes_.size(); ++i) {
      if (dims_[i] == 0) throw DimensionError("zero-length axis");
      for (std::size_t j = i + 1; j < axes_.size(); ++j)
        if (axes_[i] == axes_[j])
          throw DimensionError(std::string("duplicate axis label ") +
                               axis_name(axes_[i]));
    }
    size_ = 1;
    for (std::size_t d : dims_) size_ *= d;
    data_ = detail::alloc_tracked(size_);
    std::fill(data_.get(), data_.get() + size_, 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t(AxisList{}, {});
    t.data_[0] = v;
    return t;
  }

  static Tensor filled(AxisList axes, std::vector<std::size_t> dims, double v) {
    Tensor t(std::move(axes), std::move(dims));
    std::fill(t.data_.get(), t.data_.get() + t.size_, v);
    return t;
  }

  const AxisList& axes() const { return axes_; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t rank() const { return axes_.size(); }
  std::size_t size() const { return size_; }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_axis(Axis a) const {
    return std::find(axes_.begin(), axes_.end(), a) != axes_.end();
  }
  std::size_t axis_index(Axis a) const {
    for (std::size_t i = 0; i < axes_.size(); ++i)
      if (axes_[i] == a) return i;
    throw ContractError(std::string("axis not present: ") + axis_name(a));
  }
  std::size_t dim(Axis a) const { return dims_[axis_index(a)]; }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(dims_.size());
    std::size_t acc = 1;
    for (std::size_t i = dims_.size(); i-- > 0;) {
      s[i] = acc;
      acc *= dims_[i];
    }
    return s;
  }

  bool same_shape(const Tensor& o) const {
    return axes_ == o.axes_ && dims_ == o.dims_;
  }

  Tensor clone() const {
    Tensor t(axes_, dims_);
    std::memcpy(t.data(), data(), size_ * sizeof(double));
    return t;
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < size_; ++i)
      if (!std::isfinite(data_[i])) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < axes_.size(); ++i) {
      if (i) os << ", ";
      os << axis_name(axes_[i]) << "=" << dims_[i];
    }
    os << ")";
    return os.str();
  }

  bool defined() const { return data_ != nullptr; }

 private:
  AxisList axes_;
  std::vector<std::size_t> dims_;
  std::shared_ptr<double[]> data_;
  std::size_t size_ = 0;
};

// Odometer over a dim vector; calls fn with the flat offsets accumulated from
// per-axis strides. Used by the generic kernels in ops.hpp.
class Odometer {
 public:
  explicit Odometer(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    idx_.assign(dims_.size(), 0);
    count_ = 1;
    for (std::size_t d : dims_) count_ *= d;
  }
  std::size_t count() const { return count_; }
  const std::vector<std::size_t>& index() const { return idx_; }
  bool next() {
    for (std::size_t i = dims_.size(); i-- > 0;) {
      if (++idx_[i] < dims_[i]) return true;
      idx_[i] = 0;
    }
    return false;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> idx_;
  std::size_t count_ = 0;
};

}  // namespace avsep
