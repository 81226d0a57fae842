#include <cmath>

#include "doctest.h"
#include "dego/doe.hpp"
#include "dego/numerics.hpp"
#include "oracles.hpp"

using namespace dego;

TEST_SUITE("numerics") {
  TEST_CASE("cholesky of the identity needs no jitter") {
    const SpdFactor f = cholesky(Matrix::Identity(3, 3));
    CHECK(f.lower.isApprox(Matrix::Identity(3, 3)));
    CHECK(f.jitter_used == 0.0);
  }

  TEST_CASE("cholesky of a 2x2 matches the hand expansion") {
    Matrix a(2, 2);
    a << 4, 2, 2, 3;
    const SpdFactor f = cholesky(a);
    CHECK(f.lower(0, 0) == doctest::Approx(2.0));
    CHECK(f.lower(0, 1) == 0.0);
    CHECK(f.lower(1, 0) == doctest::Approx(1.0));
    CHECK(f.lower(1, 1) == doctest::Approx(std::sqrt(2.0)));
    CHECK((f.lower * f.lower.transpose() - a).norm() < 1e-14);
  }

  TEST_CASE("cholesky rejects the zero matrix") {
    CHECK_THROWS_AS(cholesky(Matrix::Zero(2, 2)), NotPositiveDefinite);
  }

  TEST_CASE("cholesky jitter rescues a singular matrix") {
    Matrix a = Matrix::Ones(3, 3);
    const SpdFactor f = cholesky(a);
    CHECK(f.jitter_used > 0.0);
    a.diagonal().array() += f.jitter_used;
    CHECK((f.lower * f.lower.transpose() - a).norm() < 1e-12);
  }

  TEST_CASE("normal density and distribution") {
    CHECK(norm_pdf(0.0) == doctest::Approx(0.3989423).epsilon(1e-7));
    CHECK(norm_cdf(0.0) == doctest::Approx(0.5));
    CHECK(norm_cdf(1.0) == doctest::Approx(0.8413447).epsilon(1e-7));
    CHECK(norm_cdf(-40.0) >= 0.0);
  }

  TEST_CASE("mvn_logpdf examples") {
    const SpdFactor f = cholesky(Matrix::Identity(1, 1));
    CHECK(mvn_logpdf(Vector::Zero(1), Vector::Zero(1), f) == doctest::Approx(-0.9189385));
    CHECK(mvn_logpdf(Vector::Ones(1), Vector::Zero(1), f) == doctest::Approx(-1.4189385));
  }

  TEST_CASE("mvn_logpdf matches the dense oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      Matrix b(4, 4);
      for (int i = 0; i < 16; ++i) b(i) = rng.normal();
      const Matrix cov = b * b.transpose() + 0.5 * Matrix::Identity(4, 4);
      Vector y(4), mean(4);
      for (int i = 0; i < 4; ++i) {
        y[i] = rng.normal();
        mean[i] = rng.normal();
      }
      const double ours = mvn_logpdf(y, mean, cholesky(cov));
      CHECK(std::abs(ours - oracle::log_normal_dense(y, mean, cov)) < 1e-10);
    }
  }

  TEST_CASE("factor solves and inverse") {
    Matrix a(3, 3);
    a << 5, 1, 0, 1, 4, 1, 0, 1, 3;
    const SpdFactor f = cholesky(a);
    const Vector b = Vector::LinSpaced(3, 1.0, 3.0);
    CHECK((a * f.solve(b) - b).norm() < 1e-12);
    CHECK((f.inverse() - a.inverse()).norm() < 1e-12);
    CHECK(f.log_det() == doctest::Approx(std::log(a.determinant())));
  }

  TEST_CASE("rng streams are reproducible and split independently") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 5; ++i) CHECK(a.uniform() == b.uniform());
    Rng c = a.split();
    Rng d = b.split();
    CHECK(c.seed() == d.seed());
    CHECK(c.normal() == d.normal());
    for (int i = 0; i < 100; ++i) CHECK(a.index(7) < 7u);
  }
}

TEST_SUITE("doe") {
  TEST_CASE("single point design") {
    Rng rng(1);
    const Matrix x = lhs(1, 3, rng);
    CHECK(x.rows() == 1);
    CHECK(x.cols() == 3);
    CHECK((x.array() >= 0.0).all());
    CHECK((x.array() < 1.0).all());
  }

  TEST_CASE("one point per stratum") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const int n = 1 + static_cast<int>(rng.index(12));
      const int d = 1 + static_cast<int>(rng.index(4));
      const Matrix x = lhs(n, d, rng);
      for (int j = 0; j < d; ++j) {
        std::vector<int> count(n, 0);
        for (int i = 0; i < n; ++i) ++count[static_cast<int>(std::floor(x(i, j) * n))];
        for (int c : count) CHECK(c == 1);
      }
    }
  }

  TEST_CASE("same seed gives the same design") {
    Rng a(11);
    Rng b(11);
    CHECK(lhs(6, 2, a) == lhs(6, 2, b));
  }
}
