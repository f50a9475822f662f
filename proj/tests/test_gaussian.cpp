#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "episteme/gaussian.hpp"
#include "episteme/rng.hpp"
#include "oracles.hpp"

using namespace episteme;

TEST_CASE("reparam_sample with zero noise returns the mean", "[gaussian]") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(6);
    Tensor mean = Tensor::zeros({n});
    Tensor log_var = Tensor::zeros({n});
    for (double& v : mean.values) v = rng.uniform(-3.0, 3.0);
    for (double& v : log_var.values) v = rng.uniform(-4.0, 4.0);
    const Tensor out = reparam_sample(mean, log_var, Tensor::zeros({n}));
    REQUIRE(out.values == mean.values);
  }
}

TEST_CASE("reparam_sample hand-checked values", "[gaussian]") {
  const Tensor unit = reparam_sample(Tensor::row({0.0}), Tensor::row({0.0}),
                                     Tensor::row({1.5}));
  REQUIRE(unit.values[0] == 1.5);

  const Tensor scaled = reparam_sample(
      Tensor::row({2.0}), Tensor::row({std::log(4.0)}), Tensor::row({-1.0}));
  REQUIRE(scaled.values[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("reparam_sample rejects shape mismatches", "[gaussian]") {
  REQUIRE_THROWS_AS(reparam_sample(Tensor::row({0.0, 1.0}), Tensor::row({0.0}),
                                   Tensor::row({0.0})),
                    std::invalid_argument);
}

TEST_CASE("log-variance is clamped before exponentiation", "[gaussian]") {
  const Tensor out = reparam_sample(Tensor::row({0.0}), Tensor::row({1e9}),
                                    Tensor::row({1.0}));
  REQUIRE(out.values[0] == std::exp(0.5 * kLogVarMax));
  REQUIRE(std_from_log_var(-1e9) == std::exp(0.5 * kLogVarMin));
}

TEST_CASE("KL of identical distributions is zero", "[gaussian]") {
  const Tensor mean = Tensor::row({0.4, -2.0, 1.1});
  const Tensor stddev = Tensor::row({0.7, 1.3, 2.5});
  REQUIRE(kl_diag_gaussians(mean, stddev, mean, stddev) == 0.0);
}

TEST_CASE("KL matches the 1-D integration oracle", "[gaussian]") {
  const double shifted = kl_diag_gaussians(
      Tensor::row({0.0}), Tensor::row({1.0}), Tensor::row({1.0}),
      Tensor::row({1.0}));
  REQUIRE(shifted == Catch::Approx(0.5).margin(1e-12));
  REQUIRE(shifted ==
          Catch::Approx(oracles::kl_gaussian_1d_numeric(0.0, 1.0, 1.0, 1.0))
              .margin(1e-3));

  const double widened = kl_diag_gaussians(
      Tensor::row({0.0}), Tensor::row({2.0}), Tensor::row({0.0}),
      Tensor::row({1.0}));
  REQUIRE(widened == Catch::Approx(0.80685).margin(1e-5));
  REQUIRE(widened ==
          Catch::Approx(oracles::kl_gaussian_1d_numeric(0.0, 2.0, 0.0, 1.0))
              .margin(1e-3));
}

TEST_CASE("KL rejects non-positive std", "[gaussian]") {
  REQUIRE_THROWS_AS(
      kl_diag_gaussians(Tensor::row({0.0}), Tensor::row({0.0}),
                        Tensor::row({0.0}), Tensor::row({1.0})),
      std::invalid_argument);
  REQUIRE_THROWS_AS(
      kl_diag_gaussians(Tensor::row({0.0}), Tensor::row({1.0}),
                        Tensor::row({0.0}), Tensor::row({-0.5})),
      std::invalid_argument);
}

TEST_CASE("KL is non-negative and vanishes only at equality", "[gaussian]") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(4);
    Tensor qm = Tensor::zeros({n}), qs = Tensor::zeros({n});
    Tensor pm = Tensor::zeros({n}), ps = Tensor::zeros({n});
    for (std::size_t i = 0; i < n; ++i) {
      qm[i] = rng.uniform(-5.0, 5.0);
      pm[i] = rng.uniform(-5.0, 5.0);
      qs[i] = rng.uniform(0.1, 5.0);
      ps[i] = rng.uniform(0.1, 5.0);
    }
    const double kl = kl_diag_gaussians(qm, qs, pm, ps);
    REQUIRE(kl >= 0.0);
    REQUIRE(kl > 1e-12);  // independently drawn parameters never coincide
    REQUIRE(kl_diag_gaussians(qm, qs, qm, qs) <= 1e-12);
  }
}
