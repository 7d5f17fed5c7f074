#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <utility>
#include <vector>

#include "avsep/autodiff.hpp"
#include "avsep/axes.hpp"
#include "avsep/errors.hpp"
#include "avsep/tensor.hpp"

namespace avsep {

// ---------------------------------------------------------------------------
// Raw kernels on Tensor values. Axis-label driven; used by the Var ops below
// and directly by the test oracles' independent reimplementations.
// ---------------------------------------------------------------------------
namespace kernel {

struct LoopPlan {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> sa;  // stride in a per loop axis (0 if absent)
  std::vector<std::size_t> sb;
};

// Generalized product-and-reduce. Axes appearing in both operands are aligned
// elementwise; sum_axes are reduced; every other axis survives to the output.
// Output order: a's surviving axes (a order), then b's surviving axes that a
// lacks (b order).
inline Tensor contract(const Tensor& a, const Tensor& b,
                       const AxisSet& sum_axes) {
  for (Axis s : sum_axes)
    if (!a.has_axis(s) && !b.has_axis(s))
      throw ContractError(std::string("reduce axis absent from both operands: ") +
                          axis_name(s));

  auto check_shared = [&](Axis ax) {
    if (a.has_axis(ax) && b.has_axis(ax) && a.dim(ax) != b.dim(ax))
      throw DimensionError(std::string("shared axis ") + axis_name(ax) +
                           " has lengths " + std::to_string(a.dim(ax)) +
                           " vs " + std::to_string(b.dim(ax)));
  };
  for (Axis ax : a.axes()) check_shared(ax);

  AxisList out_axes;
  std::vector<std::size_t> out_dims;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (!sum_axes.contains(a.axes()[i])) {
      out_axes.push_back(a.axes()[i]);
      out_dims.push_back(a.dims()[i]);
    }
  }
  for (std::size_t i = 0; i < b.rank(); ++i) {
    Axis ax = b.axes()[i];
    if (!sum_axes.contains(ax) && !a.has_axis(ax)) {
      out_axes.push_back(ax);
      out_dims.push_back(b.dims()[i]);
    }
  }

  auto sa_all = a.strides();
  auto sb_all = b.strides();
  auto stride_of = [&](const Tensor& t, const std::vector<std::size_t>& st,
                       Axis ax) -> std::size_t {
    return t.has_axis(ax) ? st[t.axis_index(ax)] : 0;
  };

  LoopPlan outer, inner;
  for (std::size_t i = 0; i < out_axes.size(); ++i) {
    outer.dims.push_back(out_dims[i]);
    outer.sa.push_back(stride_of(a, sa_all, out_axes[i]));
    outer.sb.push_back(stride_of(b, sb_all, out_axes[i]));
  }
  for (Axis s : sum_axes) {
    std::size_t d = a.has_axis(s) ? a.dim(s) : b.dim(s);
    inner.dims.push_back(d);
    inner.sa.push_back(stride_of(a, sa_all, s));
    inner.sb.push_back(stride_of(b, sb_all, s));
  }

  Tensor out(out_axes, out_dims);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();

  const std::size_t n_out = out.size();
  std::vector<std::size_t> oidx(outer.dims.size(), 0);
  std::size_t base_a = 0, base_b = 0;

  // Hot loop: move the innermost reduction axis into a tight strided walk.
  std::size_t in_rest = inner.dims.size();
  std::size_t last_d = 1, last_sa = 0, last_sb = 0;
  if (in_rest > 0) {
    --in_rest;
    last_d = inner.dims[in_rest];
    last_sa = inner.sa[in_rest];
    last_sb = inner.sb[in_rest];
  }

  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    if (in_rest == 0) {
      const double* qa = pa + base_a;
      const double* qb = pb + base_b;
      for (std::size_t k = 0; k < last_d; ++k)
        acc += qa[k * last_sa] * qb[k * last_sb];
    } else {
      std::vector<std::size_t> iidx(in_rest, 0);
      std::size_t ia = base_a, ib = base_b;
      for (;;) {
        const double* qa = pa + ia;
        const double* qb = pb + ib;
        for (std::size_t k = 0; k < last_d; ++k)
          acc += qa[k * last_sa] * qb[k * last_sb];
        std::size_t ax = in_rest;
        bool carry = true;
        while (ax-- > 0) {
          if (++iidx[ax] < inner.dims[ax]) {
            ia += inner.sa[ax];
            ib += inner.sb[ax];
            carry = false;
            break;
          }
          iidx[ax] = 0;
          ia -= inner.sa[ax] * (inner.dims[ax] - 1);
          ib -= inner.sb[ax] * (inner.dims[ax] - 1);
        }
        if (carry) break;
      }
    }
    po[o] = acc;

    std::size_t ax = outer.dims.size();
    while (ax-- > 0) {
      if (++oidx[ax] < outer.dims[ax]) {
        base_a += outer.sa[ax];
        base_b += outer.sb[ax];
        break;
      }
      oidx[ax] = 0;
      base_a -= outer.sa[ax] * (outer.dims[ax] - 1);
      base_b -= outer.sb[ax] * (outer.dims[ax] - 1);
    }
  }
  return out;
}

// Reshapes x into the target axis order/shape; target may add axes absent
// from x (x is tiled along them) and permute freely. Every axis of x must
// appear in the target with the same length.
inline Tensor conform(const Tensor& x, const AxisList& axes,
                      const std::vector<std::size_t>& dims) {
  for (Axis ax : x.axes()) {
    bool found = false;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      if (axes[i] == ax) {
        if (dims[i] != x.dim(ax))
          throw DimensionError(std::string("conform: axis ") + axis_name(ax) +
                               " length mismatch");
        found = true;
      }
    }
    if (!found)
      throw ContractError(std::string("conform: axis ") + axis_name(ax) +
                          " missing from target");
  }
  Tensor out(axes, dims);
  auto sx = x.strides();
  std::vector<std::size_t> step(axes.size(), 0);
  for (std::size_t i = 0; i < axes.size(); ++i)
    if (x.has_axis(axes[i])) step[i] = sx[x.axis_index(axes[i])];

  double* po = out.data();
  const double* px = x.data();
  std::vector<std::size_t> idx(axes.size(), 0);
  std::size_t off = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    po[o] = px[off];
    std::size_t ax = axes.size();
    while (ax-- > 0) {
      if (++idx[ax] < dims[ax]) {
        off += step[ax];
        break;
      }
      idx[ax] = 0;
      off -= step[ax] * (dims[ax] - 1);
    }
  }
  return out;
}

// Sum-reduce over the given axes; surviving axes keep x's order.
inline Tensor sum_axes(const Tensor& x, const AxisSet& axes) {
  for (Axis a : axes)
    if (!x.has_axis(a))
      throw ContractError(std::string("sum axis absent: ") + axis_name(a));
  AxisList keep_axes;
  std::vector<std::size_t> keep_dims;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (!axes.contains(x.axes()[i])) {
      keep_axes.push_back(x.axes()[i]);
      keep_dims.push_back(x.dims()[i]);
    }
  }
  Tensor out(keep_axes, keep_dims);
  auto sx = x.strides();
  std::vector<std::size_t> kstep, kdim, rstep, rdim;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (axes.contains(x.axes()[i])) {
      rstep.push_back(sx[i]);
      rdim.push_back(x.dims()[i]);
    } else {
      kstep.push_back(sx[i]);
      kdim.push_back(x.dims()[i]);
    }
  }
  const double* px = x.data();
  double* po = out.data();
  std::vector<std::size_t> kidx(kdim.size(), 0);
  std::size_t kbase = 0;
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = 0.0;
    std::vector<std::size_t> ridx(rdim.size(), 0);
    std::size_t roff = kbase;
    for (;;) {
      acc += px[roff];
      std::size_t ax = rdim.size();
      bool carry = true;
      while (ax-- > 0) {
        if (++ridx[ax] < rdim[ax]) {
          roff += rstep[ax];
          carry = false;
          break;
        }
        ridx[ax] = 0;
        roff -= rstep[ax] * (rdim[ax] - 1);
      }
      if (carry) break;
    }
    po[o] = acc;
    std::size_t ax = kdim.size();
    while (ax-- > 0) {
      if (++kidx[ax] < kdim[ax]) {
        kbase += kstep[ax];
        break;
      }
      kidx[ax] = 0;
      kbase -= kstep[ax] * (kdim[ax] - 1);
    }
  }
  return out;
}

// Stable softmax normalized jointly over norm_axes for each setting of the
// remaining axes.
inline Tensor softmax(const Tensor& x, const AxisSet& norm_axes) {
  if (norm_axes.empty()) throw ContractError("softmax over empty axis set");
  for (Axis a : norm_axes)
    if (!x.has_axis(a))
      throw ContractError(std::string("softmax axis absent: ") + axis_name(a));

  Tensor out(x.axes(), x.dims());
  auto sx = x.strides();
  std::vector<std::size_t> kstep, kdim, rstep, rdim;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (norm_axes.contains(x.axes()[i])) {
      rstep.push_back(sx[i]);
      rdim.push_back(x.dims()[i]);
    } else {
      kstep.push_back(sx[i]);
      kdim.push_back(x.dims()[i]);
    }
  }
  std::size_t n_groups = 1;
  for (std::size_t d : kdim) n_groups *= d;
  const double* px = x.data();
  double* po = out.data();
  std::vector<std::size_t> kidx(kdim.size(), 0);
  std::size_t kbase = 0;

  std::vector<std::size_t> offsets;  // flat offsets of one group
  {
    std::vector<std::size_t> ridx(rdim.size(), 0);
    std::size_t roff = 0;
    for (;;) {
      offsets.push_back(roff);
      std::size_t ax = rdim.size();
      bool carry = true;
      while (ax-- > 0) {
        if (++ridx[ax] < rdim[ax]) {
          roff += rstep[ax];
          carry = false;
          break;
        }
        ridx[ax] = 0;
        roff -= rstep[ax] * (rdim[ax] - 1);
      }
      if (carry) break;
    }
  }

  for (std::size_t g = 0; g < n_groups; ++g) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t off : offsets) mx = std::max(mx, px[kbase + off]);
    double denom = 0.0;
    for (std::size_t off : offsets) denom += std::exp(px[kbase + off] - mx);
    for (std::size_t off : offsets)
      po[kbase + off] = std::exp(px[kbase + off] - mx) / denom;
    std::size_t ax = kdim.size();
    while (ax-- > 0) {
      if (++kidx[ax] < kdim[ax]) {
        kbase += kstep[ax];
        break;
      }
      kidx[ax] = 0;
      kbase -= kstep[ax] * (kdim[ax] - 1);
    }
  }
  return out;
}

inline Tensor zip(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
  if (!a.same_shape(b))
    throw DimensionError("elementwise op on mismatched shapes " +
                         a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.axes(), a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename F>
inline Tensor map(const Tensor& a, F f) {
  Tensor out(a.axes(), a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

// Gradient of contract w.r.t. one operand: contract the output gradient with
// the other operand over every axis the target lacks, then tile/permute into
// the target layout.
inline Tensor adjoint_contract(const Tensor& gout, const Tensor& other,
                               const AxisList& target_axes,
                               const std::vector<std::size_t>& target_dims) {
  AxisList sum;
  auto want_sum = [&](Axis ax) {
    if (std::find(target_axes.begin(), target_axes.end(), ax) !=
        target_axes.end())
      return false;
    return std::find(sum.begin(), sum.end(), ax) == sum.end();
  };
  for (Axis ax : gout.axes())
    if (want_sum(ax)) sum.push_back(ax);
  for (Axis ax : other.axes())
    if (want_sum(ax)) sum.push_back(ax);
  Tensor partial = contract(gout, other, AxisSet(sum));
  return conform(partial, target_axes, target_dims);
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Differentiable ops on Var.
// ---------------------------------------------------------------------------

inline Var constant(Tensor t) { return Var(std::move(t), false); }

inline Var add(const Var& a, const Var& b) {
  Tensor out = kernel::zip(a.value(), b.value(),
                           [](double x, double y) { return x + y; });
  return Var::op(std::move(out), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g.clone(), g.clone()};
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tensor out = kernel::zip(a.value(), b.value(),
                           [](double x, double y) { return x - y; });
  return Var::op(std::move(out), {a, b}, [](const Tensor& g) {
    Tensor gb = kernel::map(g, [](double v) { return -v; });
    return std::vector<Tensor>{g.clone(), std::move(gb)};
  });
}

inline Var mul(const Var& a, const Var& b) {
  Tensor out = kernel::zip(a.value(), b.value(),
                           [](double x, double y) { return x * y; });
  Tensor av = a.value(), bv = b.value();
  return Var::op(std::move(out), {a, b}, [av, bv](const Tensor& g) {
    Tensor ga = kernel::zip(g, bv, [](double x, double y) { return x * y; });
    Tensor gb = kernel::zip(g, av, [](double x, double y) { return x * y; });
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = kernel::map(a.value(), [c](double v) { return v * c; });
  return Var::op(std::move(out), {a}, [c](const Tensor& g) {
    return std::vector<Tensor>{kernel::map(g, [c](double v) { return v * c; })};
  });
}

inline Var add_const(const Var& a, double c) {
  Tensor out = kernel::map(a.value(), [c](double v) { return v + c; });
  return Var::op(std::move(out), {a}, [](const Tensor& g) {
    return std::vector<Tensor>{g.clone()};
  });
}

// a + b with b's axes a subset of a's (b tiled along the rest).
inline Var add_bc(const Var& a, const Var& b) {
  Tensor bc = kernel::conform(b.value(), a.value().axes(), a.value().dims());
  Tensor out = kernel::zip(a.value(), bc,
                           [](double x, double y) { return x + y; });
  AxisList b_axes = b.value().axes();
  AxisList a_axes = a.value().axes();
  return Var::op(std::move(out), {a, b}, [a_axes, b_axes](const Tensor& g) {
    AxisList missing;
    for (Axis ax : a_axes)
      if (std::find(b_axes.begin(), b_axes.end(), ax) == b_axes.end())
        missing.push_back(ax);
    Tensor gb = kernel::sum_axes(g, AxisSet(missing));
    Tensor gb2 = kernel::conform(gb, b_axes, [&] {
      std::vector<std::size_t> d;
      for (Axis ax : b_axes) d.push_back(gb.dim(ax));
      return d;
    }());
    return std::vector<Tensor>{g.clone(), std::move(gb2)};
  });
}

// a * b with b's axes a subset of a's.
inline Var mul_bc(const Var& a, const Var& b) {
  Tensor bc = kernel::conform(b.value(), a.value().axes(), a.value().dims());
  Tensor out = kernel::zip(a.value(), bc,
                           [](double x, double y) { return x * y; });
  Tensor av = a.value(), bv = b.value();
  return Var::op(std::move(out), {a, b}, [av, bv, bc](const Tensor& g) {
    Tensor ga = kernel::zip(g, bc, [](double x, double y) { return x * y; });
    Tensor prod = kernel::zip(g, av, [](double x, double y) { return x * y; });
    AxisList missing;
    for (Axis ax : av.axes())
      if (!bv.has_axis(ax)) missing.push_back(ax);
    Tensor gb = kernel::sum_axes(prod, AxisSet(missing));
    std::vector<std::size_t> bdims;
    for (Axis ax : bv.axes()) bdims.push_back(bv.dim(ax));
    Tensor gb2 = kernel::conform(gb, bv.axes(), bdims);
    return std::vector<Tensor>{std::move(ga), std::move(gb2)};
  });
}

// Generalized tensor inner product: reduces across reduce_axes of z2.
// Shared non-reduced axes align elementwise; axes unique to either operand
// survive as an outer product, z1's first, z2's (the query side) last.
inline Var tensor_inner_product(const Var& z1, const Var& z2,
                                const AxisSet& reduce_axes) {
  for (Axis ax : reduce_axes)
    if (!z2.value().has_axis(ax))
      throw ContractError(std::string("reduce axis absent from z2: ") +
                          axis_name(ax));
  Tensor out = kernel::contract(z1.value(), z2.value(), reduce_axes);
  Tensor v1 = z1.value(), v2 = z2.value();
  return Var::op(std::move(out), {z1, z2}, [v1, v2](const Tensor& g) {
    Tensor g1 = kernel::adjoint_contract(g, v2, v1.axes(), v1.dims());
    Tensor g2 = kernel::adjoint_contract(g, v1, v2.axes(), v2.dims());
    return std::vector<Tensor>{std::move(g1), std::move(g2)};
  });
}

inline Var softmax_over_axes(const Var& scores, const AxisSet& norm_axes) {
  Tensor out = kernel::softmax(scores.value(), norm_axes);
  Tensor alpha = out;  // shares storage
  return Var::op(std::move(out), {scores}, [alpha, norm_axes](const Tensor& g) {
    Tensor ga = kernel::zip(g, alpha, [](double x, double y) { return x * y; });
    Tensor s = kernel::sum_axes(ga, norm_axes);
    Tensor sb = kernel::conform(s, alpha.axes(), alpha.dims());
    Tensor res(alpha.axes(), alpha.dims());
    for (std::size_t i = 0; i < res.size(); ++i)
      res[i] = alpha[i] * (g[i] - sb[i]);
    return std::vector<Tensor>{std::move(res)};
  });
}

inline Var sum_over(const Var& x, const AxisSet& axes) {
  Tensor out = kernel::sum_axes(x.value(), axes);
  AxisList xaxes = x.value().axes();
  std::vector<std::size_t> xdims = x.value().dims();
  return Var::op(std::move(out), {x}, [xaxes, xdims](const Tensor& g) {
    return std::vector<Tensor>{kernel::conform(g, xaxes, xdims)};
  });
}

inline Var sum_all(const Var& x) { return sum_over(x, AxisSet(x.value().axes())); }

inline Var mean_over(const Var& x, const AxisSet& axes) {
  std::size_t n = 1;
  for (Axis a : axes) n *= x.value().dim(a);
  return scale(sum_over(x, axes), 1.0 / double(n));
}

inline Var transpose(const Var& x, const AxisList& order) {
  std::vector<std::size_t> dims;
  for (Axis a : order) dims.push_back(x.value().dim(a));
  if (order.size() != x.value().rank())
    throw ContractError("transpose: axis count mismatch");
  Tensor out = kernel::conform(x.value(), order, dims);
  AxisList orig = x.value().axes();
  std::vector<std::size_t> odims = x.value().dims();
  return Var::op(std::move(out), {x}, [orig, odims](const Tensor& g) {
    return std::vector<Tensor>{kernel::conform(g, orig, odims)};
  });
}

// Renames axes without touching data.
inline Var relabel(const Var& x, const std::vector<std::pair<Axis, Axis>>& m) {
  AxisList axes = x.value().axes();
  for (auto& [from, to] : m) {
    bool found = false;
    for (Axis& a : axes)
      if (a == from) {
        a = to;
        found = true;
      }
    if (!found)
      throw ContractError(std::string("relabel: axis absent: ") +
                          axis_name(from));
  }
  Tensor out(axes, x.value().dims());
  std::memcpy(out.data(), x.value().data(), out.size() * sizeof(double));
  AxisList orig = x.value().axes();
  std::vector<std::size_t> odims = x.value().dims();
  return Var::op(std::move(out), {x}, [orig, odims](const Tensor& g) {
    Tensor gx(orig, odims);
    std::memcpy(gx.data(), g.data(), gx.size() * sizeof(double));
    return std::vector<Tensor>{std::move(gx)};
  });
}

inline Var relabel(const Var& x, Axis from, Axis to) {
  return relabel(x, std::vector<std::pair<Axis, Axis>>{{from, to}});
}

inline Var slice(const Var& x, Axis axis, std::size_t start, std::size_t len) {
  const Tensor& v = x.value();
  std::size_t ai = v.axis_index(axis);
  if (start + len > v.dims()[ai])
    throw DimensionError("slice out of range on " + v.shape_str());
  std::vector<std::size_t> dims = v.dims();
  dims[ai] = len;
  Tensor out(v.axes(), dims);
  auto sv = v.strides();
  std::size_t block = sv[ai];            // elements per index step on axis
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ai; ++i) outer *= v.dims()[i];
  std::size_t in_rowlen = v.dims()[ai] * block;
  std::size_t out_rowlen = len * block;
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_rowlen,
                v.data() + o * in_rowlen + start * block,
                out_rowlen * sizeof(double));
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x},
                 [oaxes, odims, ai, start, len, block, outer, in_rowlen,
                  out_rowlen](const Tensor& g) {
                   Tensor gx(oaxes, odims);  // zero-filled
                   for (std::size_t o = 0; o < outer; ++o)
                     std::memcpy(gx.data() + o * in_rowlen + start * block,
                                 g.data() + o * out_rowlen,
                                 out_rowlen * sizeof(double));
                   return std::vector<Tensor>{std::move(gx)};
                 });
}

inline Var concat(const std::vector<Var>& xs, Axis axis) {
  if (xs.empty()) throw ContractError("concat of nothing");
  const Tensor& first = xs[0].value();
  std::size_t ai = first.axis_index(axis);
  std::size_t total = 0;
  for (const Var& x : xs) {
    const Tensor& v = x.value();
    if (v.axes() != first.axes())
      throw DimensionError("concat: axis lists differ");
    for (std::size_t i = 0; i < v.rank(); ++i)
      if (i != ai && v.dims()[i] != first.dims()[i])
        throw DimensionError("concat: off-axis dims differ");
    total += v.dims()[ai];
  }
  std::vector<std::size_t> dims = first.dims();
  dims[ai] = total;
  Tensor out(first.axes(), dims);
  auto so = out.strides();
  std::size_t block = so[ai];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ai; ++i) outer *= dims[i];
  std::size_t out_rowlen = total * block;
  std::size_t pos = 0;
  std::vector<std::size_t> lens;
  for (const Var& x : xs) {
    const Tensor& v = x.value();
    std::size_t l = v.dims()[ai];
    lens.push_back(l);
    for (std::size_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_rowlen + pos * block,
                  v.data() + o * l * block, l * block * sizeof(double));
    pos += l;
  }
  AxisList oaxes = first.axes();
  return Var::op(std::move(out), xs,
                 [oaxes, dims, lens, ai, block, outer,
                  out_rowlen](const Tensor& g) {
                   std::vector<Tensor> gs;
                   std::size_t p = 0;
                   for (std::size_t l : lens) {
                     std::vector<std::size_t> d = dims;
                     d[ai] = l;
                     Tensor gx(oaxes, d);
                     for (std::size_t o = 0; o < outer; ++o)
                       std::memcpy(gx.data() + o * l * block,
                                   g.data() + o * out_rowlen + p * block,
                                   l * block * sizeof(double));
                     gs.push_back(std::move(gx));
                     p += l;
                   }
                   return gs;
                 });
}

inline Var pad_axis(const Var& x, Axis axis, std::size_t left,
                    std::size_t right) {
  if (left == 0 && right == 0) return x;
  const Tensor& v = x.value();
  std::size_t ai = v.axis_index(axis);
  std::vector<std::size_t> dims = v.dims();
  std::size_t old_len = dims[ai];
  dims[ai] = old_len + left + right;
  Tensor out(v.axes(), dims);
  auto so = out.strides();
  std::size_t block = so[ai];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ai; ++i) outer *= dims[i];
  std::size_t out_rowlen = dims[ai] * block;
  std::size_t in_rowlen = old_len * block;
  for (std::size_t o = 0; o < outer; ++o)
    std::memcpy(out.data() + o * out_rowlen + left * block,
                v.data() + o * in_rowlen, in_rowlen * sizeof(double));
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x},
                 [oaxes, odims, left, block, outer, in_rowlen,
                  out_rowlen](const Tensor& g) {
                   Tensor gx(oaxes, odims);
                   for (std::size_t o = 0; o < outer; ++o)
                     std::memcpy(gx.data() + o * in_rowlen,
                                 g.data() + o * out_rowlen + left * block,
                                 in_rowlen * sizeof(double));
                   return std::vector<Tensor>{std::move(gx)};
                 });
}

// Splits src_axis into overlapping windows: frame f, tap k reads position
// f*hop + k*dilation. The framed axis becomes frame_label (outer) and
// tap_label (inner), in src_axis's slot.
inline Var frame_signal(const Var& x, Axis src_axis, Axis frame_label,
                        Axis tap_label, std::size_t window, std::size_t hop,
                        std::size_t dilation = 1) {
  const Tensor& v = x.value();
  std::size_t ai = v.axis_index(src_axis);
  std::size_t len = v.dims()[ai];
  std::size_t span = (window - 1) * dilation + 1;
  if (len < span)
    throw DimensionError("frame: signal shorter than one window");
  std::size_t n_frames = (len - span) / hop + 1;

  AxisList axes;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < v.rank(); ++i) {
    if (i == ai) {
      axes.push_back(frame_label);
      dims.push_back(n_frames);
      axes.push_back(tap_label);
      dims.push_back(window);
    } else {
      axes.push_back(v.axes()[i]);
      dims.push_back(v.dims()[i]);
    }
  }
  Tensor out(axes, dims);
  auto sv = v.strides();
  std::size_t block = sv[ai];  // stride of one step along src axis
  std::size_t outer = 1;
  for (std::size_t i = 0; i < ai; ++i) outer *= v.dims()[i];
  std::size_t in_rowlen = len * block;
  std::size_t out_rowlen = n_frames * window * block;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = v.data() + o * in_rowlen;
    double* dst = out.data() + o * out_rowlen;
    for (std::size_t f = 0; f < n_frames; ++f)
      for (std::size_t k = 0; k < window; ++k)
        std::memcpy(dst + (f * window + k) * block,
                    src + (f * hop + k * dilation) * block,
                    block * sizeof(double));
  }
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(
      std::move(out), {x},
      [oaxes, odims, block, outer, in_rowlen, out_rowlen, n_frames, window,
       hop, dilation](const Tensor& g) {
        Tensor gx(oaxes, odims);  // zeros
        for (std::size_t o = 0; o < outer; ++o) {
          double* dst = gx.data() + o * in_rowlen;
          const double* src = g.data() + o * out_rowlen;
          for (std::size_t f = 0; f < n_frames; ++f)
            for (std::size_t k = 0; k < window; ++k) {
              double* d = dst + (f * hop + k * dilation) * block;
              const double* s = src + (f * window + k) * block;
              for (std::size_t b = 0; b < block; ++b) d[b] += s[b];
            }
        }
        return std::vector<Tensor>{std::move(gx)};
      });
}

// Adjoint of frame_signal with dilation 1: scatter-adds per-frame windows
// back onto a signal axis of length out_len.
inline Var overlap_add(const Var& x, Axis frame_axis, Axis tap_axis,
                       Axis out_label, std::size_t hop, std::size_t out_len) {
  const Tensor& v = x.value();
  std::size_t fi = v.axis_index(frame_axis);
  std::size_t ti = v.axis_index(tap_axis);
  if (ti != fi + 1)
    throw ContractError("overlap_add expects tap axis directly after frame axis");
  std::size_t n_frames = v.dims()[fi];
  std::size_t window = v.dims()[ti];
  if ((n_frames - 1) * hop + window > out_len)
    throw DimensionError("overlap_add: frames overrun output length");

  AxisList axes;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < v.rank(); ++i) {
    if (i == fi) {
      axes.push_back(out_label);
      dims.push_back(out_len);
    } else if (i == ti) {
      continue;
    } else {
      axes.push_back(v.axes()[i]);
      dims.push_back(v.dims()[i]);
    }
  }
  Tensor out(axes, dims);
  auto sv = v.strides();
  std::size_t block = sv[ti];
  std::size_t outer = 1;
  for (std::size_t i = 0; i < fi; ++i) outer *= v.dims()[i];
  std::size_t in_rowlen = n_frames * window * block;
  std::size_t out_rowlen = out_len * block;
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = v.data() + o * in_rowlen;
    double* dst = out.data() + o * out_rowlen;
    for (std::size_t f = 0; f < n_frames; ++f)
      for (std::size_t k = 0; k < window; ++k) {
        double* d = dst + (f * hop + k) * block;
        const double* s = src + (f * window + k) * block;
        for (std::size_t b = 0; b < block; ++b) d[b] += s[b];
      }
  }
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x},
                 [oaxes, odims, block, outer, in_rowlen, out_rowlen, n_frames,
                  window, hop](const Tensor& g) {
                   Tensor gx(oaxes, odims);
                   for (std::size_t o = 0; o < outer; ++o) {
                     double* dst = gx.data() + o * in_rowlen;
                     const double* src = g.data() + o * out_rowlen;
                     for (std::size_t f = 0; f < n_frames; ++f)
                       for (std::size_t k = 0; k < window; ++k)
                         std::memcpy(dst + (f * window + k) * block,
                                     src + (f * hop + k) * block,
                                     block * sizeof(double));
                   }
                   return std::vector<Tensor>{std::move(gx)};
                 });
}

// Splits one axis of length a*b into (outer_label=a, inner_label=b) in place.
inline Var split_axis(const Var& x, Axis axis, Axis outer_label,
                      Axis inner_label, std::size_t outer_dim,
                      std::size_t inner_dim) {
  const Tensor& v = x.value();
  std::size_t ai = v.axis_index(axis);
  if (v.dims()[ai] != outer_dim * inner_dim)
    throw DimensionError("split_axis: product mismatch");
  AxisList axes;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < v.rank(); ++i) {
    if (i == ai) {
      axes.push_back(outer_label);
      dims.push_back(outer_dim);
      axes.push_back(inner_label);
      dims.push_back(inner_dim);
    } else {
      axes.push_back(v.axes()[i]);
      dims.push_back(v.dims()[i]);
    }
  }
  Tensor out(axes, dims);
  std::memcpy(out.data(), v.data(), v.size() * sizeof(double));
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x}, [oaxes, odims](const Tensor& g) {
    Tensor gx(oaxes, odims);
    std::memcpy(gx.data(), g.data(), gx.size() * sizeof(double));
    return std::vector<Tensor>{std::move(gx)};
  });
}

// Fuses (outer, inner) into one axis; inner must sit directly after outer so
// the merge is a pure relabel of row-major storage.
inline Var merge_axes(const Var& x, Axis outer, Axis inner, Axis new_label) {
  const Tensor& v = x.value();
  std::size_t oi = v.axis_index(outer);
  std::size_t ii = v.axis_index(inner);
  if (ii != oi + 1)
    throw ContractError("merge_axes expects adjacent axes");
  AxisList axes;
  std::vector<std::size_t> dims;
  for (std::size_t i = 0; i < v.rank(); ++i) {
    if (i == oi) {
      axes.push_back(new_label);
      dims.push_back(v.dims()[oi] * v.dims()[ii]);
    } else if (i == ii) {
      continue;
    } else {
      axes.push_back(v.axes()[i]);
      dims.push_back(v.dims()[i]);
    }
  }
  Tensor out(axes, dims);
  std::memcpy(out.data(), v.data(), v.size() * sizeof(double));
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x}, [oaxes, odims](const Tensor& g) {
    Tensor gx(oaxes, odims);
    std::memcpy(gx.data(), g.data(), gx.size() * sizeof(double));
    return std::vector<Tensor>{std::move(gx)};
  });
}

// Adds a length-1 axis at the front.
inline Var unsqueeze_front(const Var& x, Axis label) {
  const Tensor& v = x.value();
  AxisList axes{label};
  std::vector<std::size_t> dims{1};
  for (std::size_t i = 0; i < v.rank(); ++i) {
    axes.push_back(v.axes()[i]);
    dims.push_back(v.dims()[i]);
  }
  Tensor out(axes, dims);
  std::memcpy(out.data(), v.data(), v.size() * sizeof(double));
  AxisList oaxes = v.axes();
  std::vector<std::size_t> odims = v.dims();
  return Var::op(std::move(out), {x}, [oaxes, odims](const Tensor& g) {
    Tensor gx(oaxes, odims);
    std::memcpy(gx.data(), g.data(), gx.size() * sizeof(double));
    return std::vector<Tensor>{std::move(gx)};
  });
}

namespace detail {
template <typename F, typename DF>
inline Var unary_op(const Var& x, F f, DF dfdx) {
  Tensor out = kernel::map(x.value(), f);
  Tensor xv = x.value();
  return Var::op(std::move(out), {x}, [xv, dfdx](const Tensor& g) {
    Tensor gx(xv.axes(), xv.dims());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * dfdx(xv[i]);
    return std::vector<Tensor>{std::move(gx)};
  });
}
}  // namespace detail

inline Var exp_op(const Var& x) {
  return detail::unary_op(x, [](double v) { return std::exp(v); },
                          [](double v) { return std::exp(v); });
}
inline Var log_op(const Var& x) {
  return detail::unary_op(x, [](double v) { return std::log(v); },
                          [](double v) { return 1.0 / v; });
}
inline Var sigmoid(const Var& x) {
  auto s = [](double v) {
    return v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                  : std::exp(v) / (1.0 + std::exp(v));
  };
  return detail::unary_op(x, s, [s](double v) {
    double y = s(v);
    return y * (1.0 - y);
  });
}
inline Var tanh_op(const Var& x) {
  return detail::unary_op(x, [](double v) { return std::tanh(v); },
                          [](double v) {
                            double t = std::tanh(v);
                            return 1.0 - t * t;
                          });
}
inline Var square(const Var& x) {
  return detail::unary_op(x, [](double v) { return v * v; },
                          [](double v) { return 2.0 * v; });
}
inline Var rsqrt(const Var& x) {
  return detail::unary_op(x, [](double v) { return 1.0 / std::sqrt(v); },
                          [](double v) {
                            return -0.5 / (v * std::sqrt(v));
                          });
}
inline Var clamp_min(const Var& x, double lo) {
  return detail::unary_op(x, [lo](double v) { return std::max(v, lo); },
                          [lo](double v) { return v > lo ? 1.0 : 0.0; });
}
inline Var log10_op(const Var& x) {
  constexpr double inv_ln10 = 0.43429448190325176;
  return detail::unary_op(x, [](double v) { return std::log10(v); },
                          [inv_ln10](double v) { return inv_ln10 / v; });
}

// Inverted dropout: keeps units with probability 1-rate and rescales them by
// 1/(1-rate) during training; exact identity in inference or at rate 0.
inline Var dropout(const Var& x, double rate, bool training,
                   std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const Tensor& v = x.value();
  Tensor mask(v.axes(), v.dims());
  std::bernoulli_distribution keep(1.0 - rate);
  double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = keep(rng) ? inv_keep : 0.0;
  Tensor out = kernel::zip(v, mask, [](double a, double b) { return a * b; });
  return Var::op(std::move(out), {x}, [mask](const Tensor& g) {
    return std::vector<Tensor>{
        kernel::zip(g, mask, [](double a, double b) { return a * b; })};
  });
}

}  // namespace avsep
