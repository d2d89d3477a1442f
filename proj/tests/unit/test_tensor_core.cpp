#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgf/gradcheck.hpp"
#include "mgf/ops.hpp"
#include "mgf/params.hpp"
#include "test_util.hpp"

using namespace mgf;
using mgf::test::conv2d_reference;
using mgf::test::probe_loss;
using mgf::test::random_param;
using mgf::test::random_tensor;

TEST_CASE("conv2d: identity kernel with padding 1 reproduces the input") {
  Var x(Tensor({1, 1, 3, 3}, 1.0));
  Tensor k({1, 1, 3, 3}, 0.0);
  k.at(0, 0, 1, 1) = 1.0;
  Var y = conv2d(x, Var(k), std::nullopt, {.padding = 1});
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(max_abs_diff(y.value(), x.value()) == 0.0);
}

TEST_CASE("conv2d: 1x1 kernel scales") {
  Var x(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  Var y = conv2d(x, Var(Tensor({1, 1, 1, 1}, {2.0})), std::nullopt);
  CHECK(y.value().values() == std::vector<double>{2, 4, 6, 8});
}

TEST_CASE("conv2d: dilation 2 matches the nested-loop reference") {
  Rng rng(1);
  Tensor x = random_tensor({1, 2, 8, 8}, rng);
  Tensor w = random_tensor({4, 2, 3, 3}, rng);
  Var y = conv2d(Var(x), Var(w), std::nullopt, {.dilation = 2});
  CHECK(max_abs_diff(y.value(), conv2d_reference(x, w, nullptr, 1, 0, 2, 1)) < 1e-10);
}

TEST_CASE("conv2d: 100 random configurations match the nested-loop reference") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t groups = 1 + rng.below(3);
    const std::size_t cg = 1 + rng.below(3), og = 1 + rng.below(3);
    const std::size_t k = 1 + rng.below(5);
    const std::size_t stride = 1 + rng.below(3), dil = 1 + rng.below(3), pad = rng.below(4);
    const std::size_t span = dil * (k - 1) + 1;
    const std::size_t h = std::max<std::size_t>(span, 3 + rng.below(10)), w = std::max<std::size_t>(span, 3 + rng.below(10));
    const std::size_t n = 1 + rng.below(2);
    Tensor x = random_tensor({n, cg * groups, h, w}, rng);
    Tensor wt = random_tensor({og * groups, cg, k, k}, rng);
    Tensor b = random_tensor({og * groups}, rng);
    Var y = conv2d(Var(x), Var(wt), Var(b), {.stride = stride, .padding = pad, .dilation = dil, .groups = groups});
    const Tensor ref = conv2d_reference(x, wt, &b, stride, pad, dil, groups);
    REQUIRE(y.shape() == ref.shape());
    CHECK(max_abs_diff(y.value(), ref) < 1e-10);
  }
}

TEST_CASE("conv2d: output size formula") {
  CHECK(conv_out_size(8, 3, {.stride = 2, .padding = 1}) == 4);
  CHECK(conv_out_size(8, 3, {.dilation = 2}) == 4);
  CHECK(conv_out_size(64, 7, {.padding = 9, .dilation = 3}) == 64);
}

TEST_CASE("conv2d: shape and group errors") {
  Var x(Tensor({1, 3, 5, 5}));
  CHECK_THROWS_AS(conv2d(x, Var(Tensor({2, 2, 3, 3})), std::nullopt), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Var(Tensor({2, 1, 3, 3})), std::nullopt, {.groups = 2}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(x, Var(Tensor({2, 3, 3, 3})), Var(Tensor({3})), {}), std::invalid_argument);
  CHECK_THROWS_AS(conv2d(Var(Tensor({3, 5, 5})), Var(Tensor({2, 3, 3, 3})), std::nullopt), std::invalid_argument);
}

TEST_CASE("bilinear_resize: constants stay constant") {
  Var x(Tensor({1, 2, 3, 5}, 0.37));
  for (auto [h, w] : {std::pair{1, 1}, {7, 2}, {6, 10}, {2, 3}}) {
    Var y = bilinear_resize(x, h, w);
    for (double v : y.value().data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-15));
  }
}

TEST_CASE("bilinear_resize: upsampled rows are monotone") {
  Var x(Tensor({1, 1, 2, 2}, {0, 1, 0, 1}));
  Var y = bilinear_resize(x, 2, 4);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 1; c < 4; ++c) CHECK(y.value().at(0, 0, r, c) >= y.value().at(0, 0, r, c - 1));
  // Half-pixel centres: outputs sample at x = -0.25 (clamped), 0.25, 0.75, 1.25.
  CHECK(y.value().at(0, 0, 0, 0) == 0.0);
  CHECK(y.value().at(0, 0, 0, 1) == doctest::Approx(0.25));
  CHECK(y.value().at(0, 0, 0, 2) == doctest::Approx(0.75));
  CHECK(y.value().at(0, 0, 0, 3) == 1.0);
}

TEST_CASE("bilinear_resize: gradient of a 4x4 ramp upsampled x2") {
  Tensor ramp({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i) / 15.0;
  Var x(ramp, true);
  Rng rng(5);
  const Tensor probe = random_tensor({1, 1, 8, 8}, rng, 0.5, 1.5);
  auto r = grad_check([&] { return probe_loss(bilinear_resize(x, 8, 8), probe); }, {x});
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("bilinear_resize: zero-size target is rejected") {
  Var x(Tensor({1, 1, 2, 2}));
  CHECK_THROWS_AS(bilinear_resize(x, 0, 3), std::invalid_argument);
}

TEST_CASE("activations") {
  Var eq(Tensor({4}, 1.5));
  Var p_eq = softmax(eq);
  for (double v : p_eq.value().data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(sigmoid(Var(Tensor::scalar(0.0))).value()[0] == 0.5);

  Var s = softmax(Var(Tensor({3}, {1, 2, 3})));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s.value()[i] - std::exp(i + 1.0) / z) < 1e-12);

  Rng rng(9);
  Var x(random_tensor({3, 5, 4}, rng, -20, 20));
  for (int axis : {0, 1, 2, -1}) {
    Var p = softmax(x, axis);
    const std::size_t ax = axis < 0 ? 2 : static_cast<std::size_t>(axis);
    const Shape& sh = x.shape();
    const std::size_t inner = ax == 2 ? 1 : (ax == 1 ? sh[2] : sh[1] * sh[2]);
    const std::size_t outer = x.numel() / (sh[ax] * inner);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        double total = 0.0;
        for (std::size_t k = 0; k < sh[ax]; ++k) total += p.value()[o * sh[ax] * inner + k * inner + i];
        CHECK(std::abs(total - 1.0) < 1e-12);
      }
  }
  Var rx = relu(x);
  for (double v : rx.value().data()) CHECK(v >= 0.0);
  CHECK_THROWS_AS(softmax(x, 3), std::invalid_argument);
}

TEST_CASE("linear: identity, zero weight, and loop oracle") {
  Rng rng(4);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor eye({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  CHECK(max_abs_diff(linear(Var(x), Var(eye), Var(Tensor({4}, 0.0))).value(), x) == 0.0);

  Tensor b = random_tensor({5}, rng);
  Var yb = linear(Var(x), Var(Tensor({5, 4}, 0.0)), Var(b));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 5; ++j) CHECK(yb.value().at(r, j) == b[j]);

  Tensor w = random_tensor({6, 4}, rng);
  Var y = linear(Var(x), Var(w), Var(random_tensor({6}, rng, 0, 0)));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += x.at(r, k) * w.at(j, k);
      CHECK(std::abs(y.value().at(r, j) - s) < 1e-10);
    }
  CHECK_THROWS_AS(linear(Var(x), Var(Tensor({6, 5})), std::nullopt), std::invalid_argument);
}

TEST_CASE("backward: closed-form gradients") {
  Rng rng(12);
  Tensor xv = random_tensor({5}, rng);
  Var w = random_param({5}, rng);
  backward(sum(mul(w, Var(xv))));
  CHECK(max_abs_diff(w.grad(), xv) < 1e-15);

  w.zero_grad();
  backward(sum(mul(w, w)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * w.value()[i]));

  CHECK_THROWS_AS(backward(mul(w, w)), std::invalid_argument);
}

TEST_CASE("backward: shared subexpressions accumulate") {
  Var w(Tensor::scalar(3.0), true);
  Var y = mul(w, w);
  backward(add(y, y));  // d/dw 2w^2 = 4w
  CHECK(w.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("grad_check on the core ops") {
  Rng rng(21);
  SUBCASE("linear") {
    Var x = random_param({3, 4}, rng), w = random_param({5, 4}, rng), b = random_param({5}, rng);
    const Tensor probe = random_tensor({3, 5}, rng);
    auto r = grad_check([&] { return probe_loss(linear(x, w, b), probe); }, {x, w, b});
    CHECK(r.max_relative_error < 1e-6);
  }
  SUBCASE("conv2d dilation 2") {
    Var x = random_param({1, 2, 8, 8}, rng), w = random_param({4, 2, 3, 3}, rng), b = random_param({4}, rng);
    const Tensor probe = random_tensor({1, 4, 8, 8}, rng);
    auto r = grad_check([&] { return probe_loss(conv2d(x, w, b, {.padding = 2, .dilation = 2}), probe); }, {x, w, b});
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("grouped strided conv2d") {
    Var x = random_param({2, 4, 7, 7}, rng), w = random_param({6, 2, 3, 3}, rng);
    const Tensor probe = random_tensor({2, 6, 4, 4}, rng);
    auto r = grad_check(
        [&] { return probe_loss(conv2d(x, w, std::nullopt, {.stride = 2, .padding = 1, .groups = 2}), probe); },
        {x, w});
    CHECK(r.max_relative_error < 1e-4);
  }
  SUBCASE("sigmoid chain") {
    Var x = random_param({10}, rng);
    const Tensor probe = random_tensor({10}, rng);
    auto r = grad_check([&] { return probe_loss(sigmoid(scale(sigmoid(x), 3.0)), probe); }, {x});
    CHECK(r.max_relative_error < 1e-5);
  }
  SUBCASE("softmax, matmul, layer norm") {
    Var a = random_param({3, 4}, rng), b = random_param({5, 4}, rng);
    Var g = random_param({5}, rng, 0.5, 1.5), be = random_param({5}, rng);
    const Tensor probe = random_tensor({3, 5}, rng);
    auto r = grad_check(
        [&] { return probe_loss(layer_norm(softmax(matmul(a, b, true), -1), g, be), probe); }, {a, b, g, be},
        {.eps = 1e-5});
    CHECK(r.max_relative_error < 1e-4);
    Var c = random_param({4, 2}, rng);
    const Tensor probe2 = random_tensor({3, 2}, rng);
    auto r2 = grad_check([&] { return probe_loss(matmul(a, c), probe2); }, {a, c});
    CHECK(r2.max_relative_error < 1e-6);
  }
  SUBCASE("batch norm, max pool, concat, resize, relu") {
    Var x = random_param({2, 3, 6, 6}, rng), y = random_param({2, 2, 6, 6}, rng);
    Var g = random_param({5}, rng, 0.5, 1.5), be = random_param({5}, rng);
    BatchNormState st;
    const Tensor probe = random_tensor({2, 5, 5, 5}, rng);
    auto r = grad_check(
        [&] {
          Var h = batch_norm2d(concat({x, y}, 1), g, be, st, true);
          return probe_loss(bilinear_resize(relu(max_pool2x2(h)), 5, 5), probe);
        },
        {x, y, g, be}, {.eps = 1e-6});
    CHECK(r.max_relative_error < 1e-4);
  }
}

TEST_CASE("batched_matmul and permute match loop oracles") {
  Rng rng(21);
  for (bool tb : {false, true}) {
    Var a = random_param({3, 4, 5}, rng);
    Var b = random_param(tb ? Shape{3, 2, 5} : Shape{3, 5, 2}, rng);
    Tensor y = batched_matmul(a, b, tb).value();
    REQUIRE(y.shape() == Shape{3, 4, 2});
    double worst = 0;
    for (std::size_t p = 0; p < 3; ++p)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
          double s = 0;
          for (std::size_t q = 0; q < 5; ++q) s += a.value().at(p, i, q) * (tb ? b.value().at(p, j, q) : b.value().at(p, q, j));
          worst = std::max(worst, std::abs(s - y.at(p, i, j)));
        }
    CHECK(worst < 1e-12);
    const Tensor probe = random_tensor({3, 4, 2}, rng);
    CHECK(grad_check([&] { return probe_loss(batched_matmul(a, b, tb), probe); }, {a, b}).max_relative_error < 1e-6);
  }

  Var x = random_param({2, 3, 4, 5}, rng);
  Tensor t = permute(x, {0, 2, 1, 3}).value();
  REQUIRE(t.shape() == Shape{2, 4, 3, 5});
  bool same = true;
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t d = 0; d < 5; ++d) same = same && t.at(a, c, b, d) == x.value().at(a, b, c, d);
  CHECK(same);
  Tensor back = permute(permute(x, {3, 0, 2, 1}), {1, 3, 2, 0}).value();
  CHECK(std::equal(back.data().begin(), back.data().end(), x.value().data().begin()));
  const Tensor probe = random_tensor({5, 2, 4, 3}, rng);
  CHECK(grad_check([&] { return probe_loss(permute(x, {3, 0, 2, 1}), probe); }, {x}).max_relative_error < 1e-6);
  CHECK_THROWS_AS(permute(x, {0, 0, 1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(batched_matmul(random_param({2, 3, 4}, rng), random_param({3, 4, 1}, rng)), std::invalid_argument);
}

TEST_CASE("grad_check rejects eps outside [1e-6, 1e-2]") {
  Var x(Tensor::scalar(1.0), true);
  CHECK_THROWS_AS(grad_check([&] { return mul(x, x); }, {x}, {.eps = 0.1}), std::invalid_argument);
}

TEST_CASE("batch norm inference uses running statistics") {
  BatchNormState st;
  st.running_mean = Tensor({1}, 2.0);
  st.running_var = Tensor({1}, 4.0);
  Var y = batch_norm2d(Var(Tensor({1, 1, 1, 2}, {2.0, 6.0})), Var(Tensor({1}, 1.0)), Var(Tensor({1}, 0.0)), st, false,
                       0.1, 0.0);
  CHECK(y.value()[0] == 0.0);
  CHECK(y.value()[1] == doctest::Approx(2.0));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ParamStore store;
  Var& w = store.add("w", Tensor({3}, {1, -2, 3}));
  backward(scale(sum(w), 0.0));
  store.adam_step({});
  CHECK(w.value().values() == std::vector<double>{1, -2, 3});
}

TEST_CASE("adam: constant gradient moves against its sign") {
  ParamStore store;
  Var& w = store.add("w", Tensor({2}, {0.0, 0.0}));
  for (int i = 0; i < 50; ++i) {
    store.zero_grad();
    backward(sum(mul(w, Var(Tensor({2}, {2.0, -0.5})))));
    store.adam_step({});
  }
  CHECK(w.value()[0] < 0.0);
  CHECK(w.value()[1] > 0.0);
}

TEST_CASE("adam: quadratic bowl converges to its minimum") {
  ParamStore store;
  Var& w = store.add("w", Tensor::scalar(0.0));
  int steps = 0;
  for (; steps < 2000; ++steps) {
    store.zero_grad();
    Var d = sub(w, Var(Tensor::scalar(3.0)));
    backward(mul(d, d));
    store.adam_step({.lr = 0.01});
  }
  CHECK(std::abs(w.value()[0] - 3.0) < 1e-3);
}

TEST_CASE("adam: missing gradient is an invalid state") {
  ParamStore store;
  store.add("a", Tensor::scalar(1.0));
  Var& b = store.add("b", Tensor::scalar(1.0));
  backward(mul(b, b));
  CHECK_THROWS_AS(store.adam_step({}), std::logic_error);
}

TEST_CASE("param store rejects duplicate names") {
  ParamStore store;
  store.add("w", Tensor::scalar(1.0));
  CHECK_THROWS_AS(store.add("w", Tensor::scalar(2.0)), std::invalid_argument);
}

TEST_CASE("MGF1 weight files round-trip and carry the documented layout") {
  const auto path = std::filesystem::temp_directory_path() / "mgf_test_weights.bin";
  std::map<std::string, Tensor> tensors;
  tensors.emplace("conv.w", Tensor({2, 1, 1, 3}, {1, 2, 3, 4, 5, -6.5}));
  tensors.emplace("b", Tensor({1}, {0.25}));
  save_tensors(path, tensors);
  auto back = load_tensors(path);
  REQUIRE(back.size() == 2);
  CHECK(back.at("conv.w").shape() == Shape{2, 1, 1, 3});
  CHECK(back.at("conv.w").values() == tensors.at("conv.w").values());
  CHECK(back.at("b").values() == std::vector<double>{0.25});

  std::ifstream is(path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), {});
  // magic + count + ("b": len, name, rank, extent, value) + ("conv.w": len, name, rank, 4 extents, 6 values)
  CHECK(bytes.size() == 4 + 8 + (8 + 1 + 8 + 8 + 8) + (8 + 6 + 8 + 32 + 48));
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MGF1");
  CHECK(bytes[4] == 2);

  {
    std::ofstream bad(path, std::ios::binary | std::ios::trunc);
    bad << "NOPE";
  }
  CHECK_THROWS_AS(load_tensors(path), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("rng: identical seeds give identical sequences") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
  }
  Rng c = Rng::derive(1, 2), d = Rng::derive(1, 2), e = Rng::derive(1, 3);
  CHECK(c.next_u64() == d.next_u64());
  CHECK(Rng::derive(1, 2).next_u64() != e.next_u64());
}

TEST_CASE("identical seeds give bit-identical training trajectories") {
  auto run = [] {
    Rng rng(5);
    ParamStore store;
    Var& w = store.add("w", he_normal({3, 1, 3, 3}, 9, rng));
    Var& b = store.add("b", Tensor({3}, 0.0));
    Tensor x = random_tensor({2, 1, 6, 6}, rng);
    std::vector<double> curve;
    for (int i = 0; i < 20; ++i) {
      store.zero_grad();
      Var loss = mean(mul(relu(conv2d(Var(x), w, b, {.padding = 1})), Var(Tensor({2, 3, 6, 6}, 1.0))));
      curve.push_back(loss.value()[0]);
      backward(loss);
      store.adam_step({});
    }
    return std::pair{curve, w.value().values()};
  };
  CHECK(run() == run());
}
