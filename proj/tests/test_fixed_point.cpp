#include <doctest.h>

#include <cmath>

#include "pbn/errors.hpp"
#include "pbn/fixed_point.hpp"

using namespace pbn;

namespace {

Tensor scalar(double v) { return Tensor::scalar(cdouble(v, 0)); }

}  // namespace

TEST_SUITE("fixed_point") {

TEST_CASE("scalar affine contraction, three steps") {
  // x <- 1 + 0.5 x from x0 = 1: 1.5, 1.75, 1.875 (fixed point 2).
  const auto res = fixed_point_solve(
      [](const Tensor& x) { return scalar(1.0 + 0.5 * x[0].real()); }, scalar(1.0),
      {3, 0.0, false});
  CHECK(res.solution[0].real() == doctest::Approx(1.875).epsilon(1e-15));
  CHECK(res.iterations_used == 3);
}

TEST_CASE("zero displacement returns the seed with zero update norm") {
  const Tensor z = scalar(4.25);
  const auto res = fixed_point_solve([&z](const Tensor&) { return z; }, z, {1, 0.0, false});
  CHECK(res.solution[0] == z[0]);
  CHECK(res.final_update_norm == 0.0);
}

TEST_CASE("geometric error after twenty steps matches the recursion oracle") {
  // x <- z + 0.9 x with z = 1 has fixed point 10; the error contracts by 0.9.
  const double z = 1.0;
  double oracle = z;  // independent recursion evaluated here
  for (int t = 0; t < 20; ++t) oracle = z + 0.9 * oracle;
  const auto res = fixed_point_solve(
      [z](const Tensor& x) { return scalar(z + 0.9 * x[0].real()); }, scalar(z),
      {20, 0.0, false});
  CHECK(res.solution[0].real() == doctest::Approx(oracle).epsilon(1e-15));
  CHECK(std::abs(res.solution[0].real() - 10.0) ==
        doctest::Approx(std::pow(0.9, 20) * 9.0).epsilon(1e-12));
  CHECK(std::abs(res.solution[0].real() - 10.0) == doctest::Approx(1.0941).epsilon(1e-3));
}

TEST_CASE("update-norm ratios converge to the contraction factor") {
  const double rho = 0.7;
  const auto res = fixed_point_solve(
      [rho](const Tensor& x) { return scalar(1.0 + rho * x[0].real()); }, scalar(0.0),
      {15, 0.0, true});
  REQUIRE(res.trace.has_value());
  const auto& tr = *res.trace;
  for (std::size_t t = 9; t + 1 < tr.size(); ++t) {
    CHECK(tr[t + 1] / tr[t] == doctest::Approx(rho).epsilon(1e-6));
  }
}

TEST_CASE("bit-identical reruns") {
  auto run = [] {
    return fixed_point_solve(
        [](const Tensor& x) {
          return Tensor::scalar(cdouble(0.3, 0.1) + cdouble(0.6, 0.2) * x[0]);
        },
        Tensor::scalar(cdouble(0.9, -0.4)), {25, 0.0, false});
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.solution[0] == b.solution[0]);
  CHECK(a.final_update_norm == b.final_update_norm);
}

TEST_CASE("early exit honors the tolerance") {
  const auto res = fixed_point_solve(
      [](const Tensor& x) { return scalar(1.0 + 0.5 * x[0].real()); }, scalar(1.0),
      {200, 1e-9, false});
  CHECK(res.iterations_used < 200);
  CHECK(res.final_update_norm < 1e-9);
}

TEST_CASE("divergence names the iteration") {
  int calls = 0;
  try {
    fixed_point_solve(
        [&calls](const Tensor& x) {
          ++calls;
          if (calls == 4) return scalar(std::nan(""));
          return scalar(0.5 * x[0].real());
        },
        scalar(1.0), {10, 0.0, false});
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("contraction verdicts") {
  const auto ok = check_contraction(0.5);
  CHECK(ok.accepted);
  CHECK(ok.margin == doctest::Approx(0.5));
  CHECK(!check_contraction(1.0).accepted);  // the boundary is not contractive
  CHECK(!check_contraction(1.7).accepted);
  CHECK_THROWS_AS(check_contraction(-0.1), Error);
}

TEST_CASE("counters accumulate inner iterations") {
  Counters c;
  fixed_point_solve([](const Tensor& x) { return x.scaled(0.5); },
                    scalar(1.0), {7, 0.0, false}, &c);
  CHECK(c.fixed_point_inner_iterations == 7);
}

}  // TEST_SUITE
