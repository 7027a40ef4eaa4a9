#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vtp/gradcheck.hpp"
#include "vtp/rng.hpp"
#include "vtp/tensor.hpp"

using namespace vtp;

namespace {

Tensor t2(std::vector<double> v, std::size_t r, std::size_t c,
          bool grad = false) {
  return Tensor::from_values({r, c}, std::move(v), grad);
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor id = t2({1, 0, 0, 1}, 2, 2);
  Tensor b = t2({3, 4, 5, 6}, 2, 2);
  Tensor prod = matmul(id, b);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(prod.values()[i] == doctest::Approx(b.values()[i]));

  Tensor row = t2({1, 2}, 1, 2);
  Tensor col = t2({3, 4}, 2, 1);
  CHECK(matmul(row, col).values()[0] == doctest::Approx(11.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = t2({1, 2, 3, 4, 5, 6}, 2, 3);
  Tensor b = t2({1, 2, 3, 4}, 2, 2);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  auto loss = [&] { return sum_all(matmul(a, b)); };
  const GradCheckReport rep =
      finite_difference_check(loss, {{"a", a}, {"b", b}}, 10, rng);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("softmax uniform, stability and normalization") {
  Tensor x = Tensor::from_values({3}, {0, 0, 0});
  Tensor s = softmax(x, 0);
  for (double v : s.values()) CHECK(v == doctest::Approx(1.0 / 3.0));

  Tensor big = Tensor::from_values({2}, {1000.0, 0.0});
  Tensor sb = softmax(big, 0);
  CHECK(sb.values()[0] == doctest::Approx(1.0));
  CHECK(sb.values()[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(sb.values()[0]));

  Rng rng(3);
  Tensor r = Tensor::randn({4, 7}, rng, 2.0);
  Tensor sr = softmax(r, 1);
  for (std::size_t row = 0; row < 4; ++row) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      const double v = sr.values()[row * 7 + c];
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax gradient vs finite differences") {
  Rng rng(5);
  Tensor x = Tensor::randn({6}, rng, 1.0, true);
  Tensor w = Tensor::randn({6}, rng, 1.0);
  auto loss = [&] { return sum_all(mul(softmax(x, 0), w)); };
  CHECK(finite_difference_check(loss, {{"x", x}}, 10, rng).max_rel_err <= 1e-6);
}

TEST_CASE("layer_norm constant row and two-point normalization") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor constant = Tensor::full({1, 4}, 5.0);
  Tensor out = layer_norm(constant, gain, bias, 1e-6);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-9));

  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor two = Tensor::from_values({1, 2}, {1.0, 3.0});
  Tensor norm = layer_norm(two, g2, b2, 0.0);
  CHECK(norm.values()[0] == doctest::Approx(-1.0));
  CHECK(norm.values()[1] == doctest::Approx(1.0));
}

TEST_CASE("layer_norm gradcheck") {
  Rng rng(7);
  Tensor x = Tensor::randn({4, 8}, rng, 1.0, true);
  Tensor g = Tensor::randn({8}, rng, 0.5, true);
  Tensor b = Tensor::randn({8}, rng, 0.5, true);
  Tensor w = Tensor::randn({4, 8}, rng, 1.0);
  auto loss = [&] { return sum_all(mul(layer_norm(x, g, b, 1e-6), w)); };
  const auto rep = finite_difference_check(
      loss, {{"x", x}, {"g", g}, {"b", b}}, 10, rng);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("gelu origin and embedding_lookup one-hot row") {
  CHECK(gelu(Tensor::from_values({1}, {0.0})).values()[0] == 0.0);

  Tensor table = Tensor::from_values({3, 3},
                                     {1, 0, 0,
                                      0, 1, 0,
                                      0, 0, 1});
  Tensor picked = embedding_lookup(table, {2, 0});
  CHECK(picked.values()[2] == 1.0);
  CHECK(picked.values()[3] == 1.0);
  CHECK_THROWS_AS(embedding_lookup(table, {3}), ContractError);
}

TEST_CASE("backward on sum gives ones, on sum of squares gives 2x") {
  Rng rng(13);
  Tensor x = Tensor::randn({5}, rng, 1.0, true);
  sum_all(x).backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

  Tensor y = Tensor::randn({5}, rng, 1.0, true);
  sum_all(mul(y, y)).backward();
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(y.grad()[i] == doctest::Approx(2.0 * y.values()[i]));
}

TEST_CASE("backward requires a scalar and accumulates additively") {
  Rng rng(17);
  Tensor x = Tensor::randn({3}, rng, 1.0, true);
  CHECK_THROWS_AS(x.backward(), ContractError);

  Tensor loss = sum_all(x);
  loss.backward();
  loss.backward();
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("composite graph gradcheck: matmul -> softmax -> mean") {
  Rng rng(19);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 5}, rng, 1.0, true);
  auto loss = [&] { return mean_all(softmax(matmul(a, b), 1)); };
  const auto rep =
      finite_difference_check(loss, {{"a", a}, {"b", b}}, 10, rng);
  CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("per-op finite-difference oracle at 10 random points each") {
  const auto entries = run_gradcheck_suite(123);
  CHECK(entries.size() >= 18);
  for (const auto& e : entries) {
    INFO(e.name, " err=", e.report.max_rel_err, " worst=", e.report.worst);
    CHECK(e.ok);
  }
}

TEST_CASE("deterministic evaluation: same seed, same bits") {
  auto build = [] {
    Rng rng(29);
    Tensor a = Tensor::randn({4, 4}, rng, 1.0);
    Tensor b = Tensor::randn({4, 4}, rng, 1.0);
    return softmax(matmul(gelu(a), b), 1).values();
  };
  const auto v1 = build(), v2 = build();
  REQUIRE(v1.size() == v2.size());
  for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1[i] == v2[i]);
}

TEST_CASE("suffix broadcast rules") {
  Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_values({3}, {10, 20, 30});
  Tensor c = add(a, b);
  CHECK(c.values()[0] == 11);
  CHECK(c.values()[5] == 36);
  Tensor bad = Tensor::from_values({2}, {1, 2});
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("32-bit precision mode rounds values to float") {
  Tensor a = Tensor::from_values({2}, {1.0 / 3.0, 2.0 / 3.0}, false,
                                 Precision::F32);
  for (double v : a.values())
    CHECK(v == static_cast<double>(static_cast<float>(v)));
  Tensor b = Tensor::from_values({2}, {0.1, 0.2}, false, Precision::F32);
  Tensor sum = add(a, b);
  CHECK(sum.precision() == Precision::F32);
  for (double v : sum.values())
    CHECK(v == static_cast<double>(static_cast<float>(v)));
  // mixing precisions promotes to 64-bit
  Tensor wide = add(a, Tensor::from_values({2}, {0.1, 0.2}));
  CHECK(wide.precision() == Precision::F64);
}

TEST_CASE("no-grad scope suppresses tape construction") {
  Rng rng(31);
  Tensor x = Tensor::randn({3}, rng, 1.0, true);
  Tensor out;
  {
    NoGradScope guard;
    out = sum_all(x);
  }
  CHECK_FALSE(out.requires_grad());
}

TEST_CASE("mac tally counts matmul contractions exactly") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4, 5});
  macs::begin();
  matmul(a, b);
  CHECK(macs::end() == 3ull * 4 * 5);

  Tensor a3 = Tensor::zeros({2, 3, 4});
  Tensor b3 = Tensor::zeros({2, 4, 5});
  macs::begin();
  matmul(a3, b3);
  CHECK(macs::end() == 2ull * 3 * 4 * 5);

  macs::begin();
  CHECK_THROWS_AS(macs::begin(), ContractError);
  macs::end();
}

TEST_CASE("masked lse ratio loss equals direct summation") {
  Rng rng(37);
  Tensor x = Tensor::randn({3, 3}, rng, 1.0, true);
  std::vector<std::uint8_t> num(9, 0), den(9, 1);
  num[0] = num[4] = num[8] = 1;
  num[1] = 1;
  Tensor loss = masked_lse_ratio_loss(x, num, den);

  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    double num_sum = 0.0, den_sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (num[i * 3 + j]) num_sum += std::exp(x.values()[i * 3 + j]);
      den_sum += std::exp(x.values()[i * 3 + j]);
    }
    expect -= std::log(num_sum / den_sum);
  }
  expect /= 3.0;
  CHECK(loss.scalar() == doctest::Approx(expect).epsilon(1e-12));

  // degenerate single-entry row: numerator == denominator -> exact zero
  Tensor one = Tensor::from_values({1, 1}, {0.37});
  std::vector<std::uint8_t> m1 = {1};
  CHECK(masked_lse_ratio_loss(one, m1, m1).scalar() == 0.0);
}
