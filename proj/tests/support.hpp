#pragma once

#include <map>
#include <random>
#include <vector>

#include "avsep/ops.hpp"

namespace avsep::test {

inline Tensor random_tensor(const AxisList& axes,
                            const std::vector<std::size_t>& dims,
                            std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(axes, dims);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

// Reference product-and-reduce written against coordinate maps instead of
// strides, so it shares no code with the library kernel.
inline Tensor oracle_tip(const Tensor& z1, const Tensor& z2,
                         const AxisSet& reduce) {
  AxisList out_axes;
  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < z1.rank(); ++i)
    if (!reduce.contains(z1.axes()[i])) {
      out_axes.push_back(z1.axes()[i]);
      out_dims.push_back(z1.dims()[i]);
    }
  for (std::size_t i = 0; i < z2.rank(); ++i)
    if (!reduce.contains(z2.axes()[i]) && !z1.has_axis(z2.axes()[i])) {
      out_axes.push_back(z2.axes()[i]);
      out_dims.push_back(z2.dims()[i]);
    }
  AxisList red_axes;
  std::vector<std::size_t> red_dims;
  for (Axis a : reduce) {
    red_axes.push_back(a);
    red_dims.push_back(z1.has_axis(a) ? z1.dim(a) : z2.dim(a));
  }

  auto value_at = [](const Tensor& t, const std::map<Axis, std::size_t>& coord) {
    std::size_t flat = 0;
    auto st = t.strides();
    for (std::size_t i = 0; i < t.rank(); ++i)
      flat += coord.at(t.axes()[i]) * st[i];
    return t[flat];
  };

  Tensor out(out_axes, out_dims);
  Odometer oo(out_dims);
  std::size_t flat = 0;
  do {
    std::map<Axis, std::size_t> coord;
    for (std::size_t i = 0; i < out_axes.size(); ++i)
      coord[out_axes[i]] = oo.index()[i];
    double acc = 0.0;
    Odometer ro(red_dims);
    if (red_dims.empty()) {
      acc = value_at(z1, coord) * value_at(z2, coord);
    } else {
      do {
        for (std::size_t i = 0; i < red_axes.size(); ++i)
          coord[red_axes[i]] = ro.index()[i];
        acc += value_at(z1, coord) * value_at(z2, coord);
      } while (ro.next());
    }
    out[flat++] = acc;
  } while (oo.next());
  return out;
}

// Reference softmax over an axis subset, grouping by explicit coordinates.
inline Tensor oracle_softmax(const Tensor& x, const AxisSet& norm) {
  Tensor out(x.axes(), x.dims());
  std::vector<std::size_t> group_dims, norm_dims;
  std::vector<std::size_t> group_pos, norm_pos;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (norm.contains(x.axes()[i])) {
      norm_dims.push_back(x.dims()[i]);
      norm_pos.push_back(i);
    } else {
      group_dims.push_back(x.dims()[i]);
      group_pos.push_back(i);
    }
  }
  auto flat_of = [&](const std::vector<std::size_t>& gi,
                     const std::vector<std::size_t>& ni) {
    std::vector<std::size_t> full(x.rank());
    for (std::size_t i = 0; i < group_pos.size(); ++i) full[group_pos[i]] = gi[i];
    for (std::size_t i = 0; i < norm_pos.size(); ++i) full[norm_pos[i]] = ni[i];
    std::size_t flat = 0;
    auto st = x.strides();
    for (std::size_t i = 0; i < x.rank(); ++i) flat += full[i] * st[i];
    return flat;
  };
  Odometer go(group_dims);
  do {
    std::vector<std::size_t> gi(go.index());
    double mx = -std::numeric_limits<double>::infinity();
    Odometer no1(norm_dims);
    do {
      mx = std::max(mx, x[flat_of(gi, no1.index())]);
    } while (no1.next());
    double denom = 0.0;
    Odometer no2(norm_dims);
    do {
      denom += std::exp(x[flat_of(gi, no2.index())] - mx);
    } while (no2.next());
    Odometer no3(norm_dims);
    do {
      std::size_t f = flat_of(gi, no3.index());
      out[f] = std::exp(x[f] - mx) / denom;
    } while (no3.next());
  } while (go.next());
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace avsep::test
