#include <catch2/catch_amalgamated.hpp>

#include "avsep/gradcheck.hpp"
#include "avsep/nn.hpp"
#include "avsep/ops.hpp"
#include "support.hpp"

using namespace avsep;
using avsep::test::max_abs_diff;
using avsep::test::oracle_softmax;
using avsep::test::oracle_tip;
using avsep::test::random_tensor;

TEST_CASE("tensor construction and invariants") {
  Tensor t({Axis::Src, Axis::Depth}, {2, 3});
  REQUIRE(t.size() == 6);
  for (std::size_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 0.0);
  REQUIRE(t.dim(Axis::Depth) == 3);
  REQUIRE(t.axis_index(Axis::Depth) == 1);
  REQUIRE_THROWS_AS(Tensor({Axis::Src, Axis::Src}, {2, 2}), DimensionError);
  REQUIRE_THROWS_AS(Tensor({Axis::Src}, {0}), DimensionError);
  REQUIRE_THROWS_AS(t.dim(Axis::Time), ContractError);

  Tensor f = Tensor::filled({Axis::Time}, {4}, 2.5);
  for (std::size_t i = 0; i < 4; ++i) REQUIRE(f[i] == 2.5);
  REQUIRE(Tensor::scalar(7.0).size() == 1);
}

TEST_CASE("memory meter budget produces an allocation failure") {
  auto& meter = MemoryMeter::instance();
  meter.set_budget(0);
  meter.reset_peak();
  std::size_t live0 = meter.live();
  {
    Tensor t({Axis::Time}, {128});
    REQUIRE(meter.live() == live0 + 128 * sizeof(double));
  }
  REQUIRE(meter.live() == live0);
  REQUIRE(meter.peak() >= live0 + 128 * sizeof(double));

  meter.set_budget(live0 + 100 * sizeof(double));
  REQUIRE_THROWS_AS(Tensor({Axis::Time}, {101}), MemoryBudgetError);
  REQUIRE_NOTHROW(Tensor({Axis::Time}, {100}));
  meter.set_budget(0);
}

TEST_CASE("inner product reduces one operand axis to dot products") {
  // Two sources against a shared depth vector.
  Tensor z1({Axis::Src, Axis::Depth}, {2, 3});
  double z1v[] = {1, 2, 3, 4, 5, 6};
  for (int i = 0; i < 6; ++i) z1[i] = z1v[i];
  Tensor z2({Axis::Depth}, {3});
  z2[0] = 1;
  z2[1] = 0;
  z2[2] = -1;

  Var out = tensor_inner_product(Var(z1), Var(z2), {Axis::Depth});
  REQUIRE(out.value().axes() == AxisList{Axis::Src});
  REQUIRE(out.value()[0] == Catch::Approx(1 * 1 + 2 * 0 + 3 * -1));
  REQUIRE(out.value()[1] == Catch::Approx(4 * 1 + 5 * 0 + 6 * -1));
}

TEST_CASE("inner product with distinct row labels forms an outer identity") {
  // One-hot rows on each side, distinct row labels, shared depth reduced.
  Tensor z1({Axis::Row, Axis::Depth}, {2, 2});
  z1[0] = 1;
  z1[3] = 1;
  Tensor z2({Axis::RowK, Axis::Depth}, {2, 2});
  z2[0] = 1;
  z2[3] = 1;
  Var out = tensor_inner_product(Var(z1), Var(z2), {Axis::Depth});
  REQUIRE(out.value().axes() == (AxisList{Axis::Row, Axis::RowK}));
  REQUIRE(out.value()[0] == 1.0);
  REQUIRE(out.value()[1] == 0.0);
  REQUIRE(out.value()[2] == 0.0);
  REQUIRE(out.value()[3] == 1.0);
}

TEST_CASE("inner product aligns shared unreduced axes elementwise") {
  std::mt19937_64 rng(11);
  Tensor z1 = random_tensor({Axis::Src, Axis::Depth}, {2, 3}, rng);
  Tensor z2 = random_tensor({Axis::Src, Axis::Depth}, {2, 3}, rng);
  Var out = tensor_inner_product(Var(z1), Var(z2), {Axis::Depth});
  REQUIRE(out.value().axes() == AxisList{Axis::Src});
  for (std::size_t m = 0; m < 2; ++m) {
    double expect = 0;
    for (std::size_t d = 0; d < 3; ++d) expect += z1[m * 3 + d] * z2[m * 3 + d];
    REQUIRE(out.value()[m] == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("inner product places query-only axes last") {
  std::mt19937_64 rng(12);
  Tensor z1 = random_tensor({Axis::Time, Axis::Depth}, {2, 3}, rng);
  Tensor z2 = random_tensor({Axis::Depth, Axis::Src}, {3, 4}, rng);
  Var out = tensor_inner_product(Var(z1), Var(z2), {Axis::Depth});
  REQUIRE(out.value().axes() == (AxisList{Axis::Time, Axis::Src}));
  REQUIRE(out.value().dims() == (std::vector<std::size_t>{2, 4}));
}

TEST_CASE("inner product rejects reduce axes missing from the second operand") {
  Tensor z1({Axis::Src, Axis::Depth}, {2, 3});
  Tensor z2({Axis::Depth}, {3});
  REQUIRE_THROWS_AS(
      tensor_inner_product(Var(z1), Var(z2), {Axis::Src}), ContractError);
}

TEST_CASE("inner product matches the loop reference on random shapes") {
  std::mt19937_64 rng(13);
  struct Case {
    AxisList a1, a2;
    std::vector<std::size_t> d1, d2;
    AxisSet reduce;
  };
  std::vector<Case> cases = {
      {{Axis::Src, Axis::Depth}, {Axis::Depth}, {3, 4}, {4}, {Axis::Depth}},
      {{Axis::Time, Axis::Depth},
       {Axis::TimeK, Axis::Depth},
       {3, 4},
       {5, 4},
       {Axis::Depth}},
      {{Axis::Head, Axis::Time, Axis::Depth},
       {Axis::Head, Axis::TimeK, Axis::Depth},
       {2, 3, 4},
       {2, 5, 4},
       {Axis::Depth}},
      {{Axis::Src, Axis::Time, Axis::Depth},
       {Axis::Time, Axis::Depth, Axis::Space},
       {2, 3, 4},
       {3, 4, 5},
       {Axis::Time, Axis::Depth}},
      {{Axis::Src, Axis::Depth},
       {Axis::Depth, Axis::DepthK},
       {3, 4},
       {4, 6},
       {Axis::Depth}},
  };
  for (const auto& c : cases) {
    Tensor z1 = random_tensor(c.a1, c.d1, rng);
    Tensor z2 = random_tensor(c.a2, c.d2, rng);
    Var got = tensor_inner_product(Var(z1), Var(z2), c.reduce);
    Tensor want = oracle_tip(z1, z2, c.reduce);
    REQUIRE(got.value().axes() == want.axes());
    REQUIRE(max_abs_diff(got.value(), want) < 1e-10);
  }
}

TEST_CASE("softmax normalizes jointly over the requested axes") {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({Axis::Time, Axis::Src, Axis::Space}, {2, 3, 4},
                           rng, -3.0, 3.0);
  AxisSet norm{Axis::Src, Axis::Space};
  Var got = softmax_over_axes(Var(x), norm);
  Tensor want = oracle_softmax(x, norm);
  REQUIRE(max_abs_diff(got.value(), want) < 1e-12);

  // Each normalization group sums to one.
  Tensor sums = kernel::sum_axes(got.value(), norm);
  for (std::size_t i = 0; i < sums.size(); ++i)
    REQUIRE(sums[i] == Catch::Approx(1.0).margin(1e-12));

  // Shift invariance within a group despite large magnitudes.
  Tensor shifted = x.clone();
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 500.0;
  Var got2 = softmax_over_axes(Var(shifted), norm);
  REQUIRE(max_abs_diff(got.value(), got2.value()) < 1e-12);

  REQUIRE_THROWS_AS(softmax_over_axes(Var(x), AxisSet{}), ContractError);
}

TEST_CASE("softmax of constants is uniform") {
  Tensor x = Tensor::filled({Axis::Src}, {5}, 3.7);
  Var got = softmax_over_axes(Var(x), {Axis::Src});
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(got.value()[i] == Catch::Approx(0.2).margin(1e-15));
}

TEST_CASE("framing splits a signal into hopped windows") {
  Tensor x({Axis::Sample}, {8});
  for (int i = 0; i < 8; ++i) x[i] = i;
  Var f = frame_signal(Var(x), Axis::Sample, Axis::Time, Axis::Tap, 4, 2);
  REQUIRE(f.value().axes() == (AxisList{Axis::Time, Axis::Tap}));
  REQUIRE(f.value().dims() == (std::vector<std::size_t>{3, 4}));
  double want[] = {0, 1, 2, 3, 2, 3, 4, 5, 4, 5, 6, 7};
  for (int i = 0; i < 12; ++i) REQUIRE(f.value()[i] == want[i]);

  // Dilation widens the window span without adding taps.
  Var fd =
      frame_signal(Var(x), Axis::Sample, Axis::Time, Axis::Tap, 3, 1, 2);
  REQUIRE(fd.value().dims() == (std::vector<std::size_t>{4, 3}));
  double wantd[] = {0, 2, 4, 1, 3, 5, 2, 4, 6, 3, 5, 7};
  for (int i = 0; i < 12; ++i) REQUIRE(fd.value()[i] == wantd[i]);
}

TEST_CASE("overlap add is the adjoint scatter of framing") {
  Tensor w({Axis::Time, Axis::Tap}, {3, 4});
  for (int i = 0; i < 12; ++i) w[i] = 1.0;
  Var y = overlap_add(Var(w), Axis::Time, Axis::Tap, Axis::Sample, 2, 8);
  // Hop 2, window 4: interior samples receive two windows.
  double want[] = {1, 1, 2, 2, 2, 2, 1, 1};
  REQUIRE(y.value().dims() == std::vector<std::size_t>{8});
  for (int i = 0; i < 8; ++i) REQUIRE(y.value()[i] == want[i]);
}

TEST_CASE("slice concat pad roundtrip") {
  std::mt19937_64 rng(31);
  Tensor x = random_tensor({Axis::Src, Axis::Time}, {3, 5}, rng);
  Var a = slice(Var(x), Axis::Src, 0, 1);
  Var b = slice(Var(x), Axis::Src, 1, 2);
  Var back = concat({a, b}, Axis::Src);
  REQUIRE(max_abs_diff(back.value(), x) == 0.0);

  Var p = pad_axis(Var(x), Axis::Time, 2, 1);
  REQUIRE(p.value().dim(Axis::Time) == 8);
  REQUIRE(p.value()[0] == 0.0);
  Var unp = slice(p, Axis::Time, 2, 5);
  REQUIRE(max_abs_diff(unp.value(), x) == 0.0);
}

TEST_CASE("split and relabel preserve storage order") {
  Tensor x({Axis::Joint}, {6});
  for (int i = 0; i < 6; ++i) x[i] = i;
  Var s = split_axis(Var(x), Axis::Joint, Axis::Src, Axis::Depth, 2, 3);
  REQUIRE(s.value().axes() == (AxisList{Axis::Src, Axis::Depth}));
  for (int i = 0; i < 6; ++i) REQUIRE(s.value()[i] == i);

  Var r = relabel(s, {{Axis::Src, Axis::Time}});
  REQUIRE(r.value().axes() == (AxisList{Axis::Time, Axis::Depth}));
  REQUIRE_THROWS_AS(relabel(s, Axis::Space, Axis::Time), ContractError);
}

TEST_CASE("dropout is the identity when disabled") {
  std::mt19937_64 rng(41);
  Tensor x = random_tensor({Axis::Depth}, {16}, rng);
  Var same = dropout(Var(x), 0.0, true, rng);
  REQUIRE(max_abs_diff(same.value(), x) == 0.0);
  Var infer = dropout(Var(x), 0.5, false, rng);
  REQUIRE(max_abs_diff(infer.value(), x) == 0.0);

  // Surviving units are scaled so the expectation is preserved.
  Var train = dropout(Var(x), 0.5, true, rng);
  for (std::size_t i = 0; i < 16; ++i) {
    double v = train.value()[i];
    REQUIRE((v == 0.0 || v == Catch::Approx(2.0 * x[i])));
  }
  REQUIRE_THROWS_AS(dropout(Var(x), 1.0, true, rng), ConfigError);
}

TEST_CASE("layer norm output has zero mean and unit variance per fiber") {
  std::mt19937_64 rng(51);
  ParamStore ps;
  LayerNorm ln(ps, "ln", 8);
  Tensor x = random_tensor({Axis::Time, Axis::Depth}, {3, 8}, rng, -2.0, 5.0);
  Var y = ln(Var(x));
  for (std::size_t t = 0; t < 3; ++t) {
    double mean = 0, var = 0;
    for (std::size_t d = 0; d < 8; ++d) mean += y.value()[t * 8 + d];
    mean /= 8;
    for (std::size_t d = 0; d < 8; ++d) {
      double c = y.value()[t * 8 + d] - mean;
      var += c * c;
    }
    var /= 8;
    REQUIRE(mean == Catch::Approx(0.0).margin(1e-9));
    REQUIRE(var == Catch::Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("dense layer applies an affine map on depth") {
  std::mt19937_64 rng(61);
  ParamStore ps;
  DenseLayer dense(ps, "d", 3, 2, rng, 0.5);
  Tensor x = random_tensor({Axis::Time, Axis::Depth}, {4, 3}, rng);
  Var y = dense(Var(x));
  REQUIRE(y.value().axes() == (AxisList{Axis::Time, Axis::Depth}));
  REQUIRE(y.value().dim(Axis::Depth) == 2);
  const Tensor& w = dense.weight().value();
  const Tensor& b = dense.bias().value();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t o = 0; o < 2; ++o) {
      double want = b[o];
      for (std::size_t i = 0; i < 3; ++i) want += x[t * 3 + i] * w[i * 2 + o];
      REQUIRE(y.value()[t * 2 + o] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("non-finite results are rejected") {
  Tensor x({Axis::Depth}, {2});
  x[0] = -1.0;
  x[1] = 1.0;
  REQUIRE_THROWS_AS(log_op(Var(x)), NumericError);
}

TEST_CASE("backward accumulates through shared subexpressions") {
  // y = (a*a) + (a*a) so dy/da = 4a.
  Tensor av({Axis::Depth}, {3});
  av[0] = 1;
  av[1] = -2;
  av[2] = 0.5;
  Var a(av, true);
  Var sq = square(a);
  Var y = sum_all(add(sq, sq));
  backward(y);
  for (std::size_t i = 0; i < 3; ++i)
    REQUIRE(a.grad()[i] == Catch::Approx(4.0 * av[i]));
}

TEST_CASE("no-grad evaluation records no tape") {
  Tensor av({Axis::Depth}, {3});
  av[0] = 1;
  Var a(av, true);
  NoGradGuard ng;
  Var y = sum_all(square(a));
  REQUIRE_FALSE(y.requires_grad());
}

TEST_CASE("gradient check covers the primitive operations") {
  std::mt19937_64 rng(71);
  auto check = [&](const char* what, auto fn, std::vector<Var> leaves) {
    auto res = grad_check(fn, leaves);
    INFO(what << " worst " << res.worst_leaf << "[" << res.worst_index
              << "] analytic " << res.analytic << " numeric " << res.numeric);
    REQUIRE(res.max_rel_err < 1e-6);
  };

  {
    Var z1(random_tensor({Axis::Src, Axis::Time, Axis::Depth}, {2, 3, 4}, rng),
           true);
    Var z2(random_tensor({Axis::TimeK, Axis::Depth}, {3, 4}, rng), true);
    Tensor wv = random_tensor({Axis::Src, Axis::Time, Axis::TimeK}, {2, 3, 3},
                              rng);
    check("tensor_inner_product",
          [wv](const std::vector<Var>& ls) {
            Var out = tensor_inner_product(ls[0], ls[1], {Axis::Depth});
            return sum_all(mul(out, constant(wv)));
          },
          {z1, z2});
  }
  {
    Var x(random_tensor({Axis::Time, Axis::Src}, {3, 4}, rng, -2, 2), true);
    Tensor wv = random_tensor({Axis::Time, Axis::Src}, {3, 4}, rng);
    check("softmax",
          [wv](const std::vector<Var>& ls) {
            Var sm = softmax_over_axes(ls[0], {Axis::Src});
            return sum_all(mul(sm, constant(wv)));
          },
          {x});
  }
  {
    Var x(random_tensor({Axis::Time, Axis::Depth}, {3, 4}, rng), true);
    Var b(random_tensor({Axis::Depth}, {4}, rng), true);
    Tensor wv = random_tensor({Axis::Time, Axis::Depth}, {3, 4}, rng);
    check("broadcast add and mul",
          [wv](const std::vector<Var>& ls) {
            Var y = mul_bc(add_bc(ls[0], ls[1]), ls[1]);
            return sum_all(mul(y, constant(wv)));
          },
          {x, b});
  }
  {
    ParamStore ps;
    LayerNorm ln(ps, "ln", 5);
    Var x(random_tensor({Axis::Time, Axis::Depth}, {2, 5}, rng, -2, 2), true);
    Tensor wv = random_tensor({Axis::Time, Axis::Depth}, {2, 5}, rng);
    check("layer norm",
          [&, wv](const std::vector<Var>& ls) {
            return sum_all(mul(ln(ls[0]), constant(wv)));
          },
          {x, ln.gain(), ln.bias()});
  }
  {
    ParamStore ps;
    DenseLayer dense(ps, "d", 4, 3, rng, 0.5);
    Var x(random_tensor({Axis::Time, Axis::Depth}, {2, 4}, rng), true);
    Tensor wv = random_tensor({Axis::Time, Axis::Depth}, {2, 3}, rng);
    check("dense",
          [&, wv](const std::vector<Var>& ls) {
            return sum_all(mul(dense(ls[0]), constant(wv)));
          },
          {x, dense.weight(), dense.bias()});
  }
  {
    // Keep inputs away from the relu kink so central differences are valid.
    Tensor xv = random_tensor({Axis::Depth}, {6}, rng);
    for (std::size_t i = 0; i < 6; ++i)
      if (std::abs(xv[i]) < 0.05) xv[i] = 0.1;
    Var x(xv, true);
    check("unary chain",
          [](const std::vector<Var>& ls) {
            Var y = relu(ls[0]);
            y = add_const(y, 0.5);
            y = log_op(y);
            y = exp_op(y);
            y = mul(y, sigmoid(ls[0]));
            y = add(y, tanh_op(ls[0]));
            return sum_all(y);
          },
          {x});
  }
  {
    Var x(random_tensor({Axis::Sample}, {12}, rng), true);
    Tensor wv = random_tensor({Axis::Time, Axis::Tap}, {5, 4}, rng);
    check("frame",
          [wv](const std::vector<Var>& ls) {
            Var f =
                frame_signal(ls[0], Axis::Sample, Axis::Time, Axis::Tap, 4, 2);
            return sum_all(mul(f, constant(wv)));
          },
          {x});
  }
  {
    Var w(random_tensor({Axis::Time, Axis::Tap}, {3, 4}, rng), true);
    Tensor wv = random_tensor({Axis::Sample}, {8}, rng);
    check("overlap add",
          [wv](const std::vector<Var>& ls) {
            Var y = overlap_add(ls[0], Axis::Time, Axis::Tap, Axis::Sample, 2,
                                8);
            return sum_all(mul(y, constant(wv)));
          },
          {w});
  }
  {
    Var x(random_tensor({Axis::Src, Axis::Time}, {3, 4}, rng), true);
    Tensor wv = random_tensor({Axis::Src, Axis::Time}, {2, 6}, rng);
    check("slice pad concat",
          [wv](const std::vector<Var>& ls) {
            Var a = slice(ls[0], Axis::Src, 0, 2);
            Var p = pad_axis(a, Axis::Time, 1, 1);
            return sum_all(mul(p, constant(wv)));
          },
          {x});
  }
}
