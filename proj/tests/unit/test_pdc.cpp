#include <algorithm>

#include "doctest.h"
#include "mgf/edge/pdc.hpp"
#include "mgf/gradcheck.hpp"
#include "test_util.hpp"

using namespace mgf;
using namespace mgf::edge;
using namespace mgf::test;

TEST_CASE("pdc: kernel sizes and names") {
  CHECK(pdc_kernel_size(PdcKind::cpdc) == 3);
  CHECK(pdc_kernel_size(PdcKind::apdc) == 3);
  CHECK(pdc_kernel_size(PdcKind::rpdc) == 5);
  for (PdcKind k : {PdcKind::vanilla, PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc}) CHECK(parse_pdc_kind(pdc_name(k)) == k);
  CHECK_THROWS_AS(parse_pdc_kind("xpdc"), std::invalid_argument);
}

TEST_CASE("pdc: shape mismatch is rejected") {
  CHECK_THROWS_AS(pdc_to_vanilla(PdcKind::rpdc, Tensor({1, 1, 3, 3})), std::invalid_argument);
  CHECK_THROWS_AS(pdc_to_vanilla(PdcKind::cpdc, Tensor({1, 1, 5, 5})), std::invalid_argument);
}

TEST_CASE("pdc: cpdc centre tap and apdc ring match the closed form") {
  Tensor w({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor c = pdc_to_vanilla(PdcKind::cpdc, w);
  CHECK(c[4] == doctest::Approx(5 - 45));
  CHECK(c[0] == 1);
  Tensor a = pdc_to_vanilla(PdcKind::apdc, w);
  CHECK(a[4] == 0);
  CHECK(a[0] == 1 - 4);  // prev of top-left going clockwise is middle-left
  CHECK(a[1] == 2 - 1);
  CHECK(a[5] == 6 - 3);
}

TEST_CASE("pdc: vanilla conv with the rewritten kernel equals the direct pairwise sum") {
  Rng rng(77);
  for (PdcKind kind : {PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc}) {
    const std::size_t k = pdc_kernel_size(kind);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      Tensor x = random_tensor({1, 2, 8, 8}, rng);
      Tensor w = random_tensor({3, 2, k, k}, rng);
      Tensor got = pdc_conv2d(Var(x), Var(w), kind).value();
      worst = std::max(worst, max_abs_diff(got, pdc_direct(x, w, kind)));
    }
    CAPTURE(pdc_name(kind));
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("pdc: constant images give zero everywhere") {
  Rng rng(5);
  for (PdcKind kind : {PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc}) {
    const std::size_t k = pdc_kernel_size(kind);
    Tensor x({1, 1, 9, 9}, 0.37);
    Tensor y = pdc_conv2d(Var(x), Var(random_tensor({2, 1, k, k}, rng)), kind).value();
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t r = 0; r < 9; ++r)
        for (std::size_t c = 0; c < 9; ++c) CHECK(std::abs(y.at(0, o, r, c)) < 1e-12);
  }
}

TEST_CASE("pdc: gradients through the kernel rewrite") {
  Rng rng(8);
  for (PdcKind kind : {PdcKind::cpdc, PdcKind::apdc, PdcKind::rpdc}) {
    const std::size_t k = pdc_kernel_size(kind);
    Var x = random_param({1, 2, 6, 6}, rng), w = random_param({2, 1, k, k}, rng);
    const Tensor probe = random_tensor({1, 2, 6, 6}, rng);
    auto r = grad_check([&] { return probe_loss(pdc_conv2d(x, w, kind, 2), probe); }, {x, w});
    CHECK(r.max_relative_error < 1e-4);
  }
}
