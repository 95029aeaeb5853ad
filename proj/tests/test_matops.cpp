#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "msc/errors.hpp"
#include "msc/matops.hpp"
#include "oracles.hpp"

using namespace msc;

namespace {

double orthonormality_error(const Matrix& q) {
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).norm();
}

void check_svd(const Matrix& a) {
  const SvdFactors f = svd(a);
  const Eigen::Index k = std::min(a.rows(), a.cols());
  REQUIRE(f.u.rows() == a.rows());
  REQUIRE(f.u.cols() == k);
  REQUIRE(f.v.rows() == a.cols());
  REQUIRE(f.v.cols() == k);
  REQUIRE(f.d.size() == k);
  CHECK((f.reconstruct() - a).norm() <= 1e-8 * (1.0 + a.norm()));
  CHECK(orthonormality_error(f.u) <= 1e-8);
  CHECK(orthonormality_error(f.v) <= 1e-8);
  for (Eigen::Index i = 0; i < k; ++i) {
    CHECK(f.d(i) >= 0.0);
    if (i > 0) CHECK(f.d(i) <= f.d(i - 1));
  }
}

}  // namespace

TEST_CASE("svd of small fixed matrices") {
  CHECK(svd(Matrix::Identity(2, 2)).d.isApprox(Vector::Ones(2)));
  Matrix d(2, 2);
  d << 3, 0, 0, 4;
  const Vector dv = svd(d).d;
  CHECK(dv(0) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(dv(1) == doctest::Approx(3.0).epsilon(1e-14));
  Matrix r(2, 2);
  r << 1, 2, 2, 4;
  const SvdFactors f = svd(r);
  CHECK(f.d(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(std::abs(f.d(1)) <= 1e-12);
  CHECK(orthonormality_error(f.u) <= 1e-12);
  CHECK(orthonormality_error(f.v) <= 1e-12);
}

TEST_CASE("svd invariants on 1000 random matrices up to 50x50") {
  std::mt19937_64 gen(20240601);
  std::uniform_int_distribution<int> dim(1, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    Matrix a = oracle::random_matrix(gen, dim(gen), dim(gen));
    if (trial % 10 == 0 && a.cols() > 2) a.col(1) = 2.0 * a.col(0);  // rank deficient
    if (trial % 17 == 0) a *= 1e6;
    check_svd(a);
  }
}

TEST_CASE("svd degenerate shapes and errors") {
  check_svd(Matrix::Zero(4, 3));
  check_svd(Matrix::Ones(1, 7));
  check_svd(Matrix::Ones(7, 1));
  Matrix bad = Matrix::Ones(2, 2);
  bad(0, 1) = NAN;
  CHECK_THROWS_AS(svd(bad), ArgumentError);
}

TEST_CASE("singular values agree with the Jacobi eigen oracle") {
  std::mt19937_64 gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = oracle::random_matrix(gen, 5, 3);
    const auto expected = oracle::singular_values(a);
    const Vector got = singular_values(a);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(got(i) - expected[i]) <= 1e-8);
    CHECK(std::abs(nuclear_norm(a) - oracle::nuclear_norm(a)) <= 1e-8);
  }
}

TEST_CASE("nuclear norm values and ordering") {
  CHECK(nuclear_norm(Matrix::Identity(2, 2)) == doctest::Approx(2.0).epsilon(1e-14));
  Matrix d(2, 2);
  d << 3, 0, 0, 4;
  CHECK(nuclear_norm(d) == doctest::Approx(7.0).epsilon(1e-14));
  CHECK(nuclear_norm(Matrix::Zero(3, 3)) == 0.0);
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix a = oracle::random_matrix(gen, 1 + trial % 9, 1 + trial % 7);
    const double nuc = nuclear_norm(a);
    const double fro = a.norm();
    const double spectral = singular_values(a)(0);
    CHECK(nuc >= fro - 1e-10);
    CHECK(fro >= spectral - 1e-10);
  }
}

TEST_CASE("soft threshold definition cases") {
  CHECK(soft_threshold(3.0, 1.0) == 2.0);
  CHECK(soft_threshold(-0.5, 1.0) == 0.0);
  CHECK(soft_threshold(0.0, 5.0) == 0.0);
  CHECK(soft_threshold(-3.0, 1.0) == -2.0);
  std::mt19937_64 gen(3);
  const Matrix a = oracle::random_matrix(gen, 6, 4);
  CHECK(soft_threshold(a, 0.0) == a);
  const Matrix s = soft_threshold(a, 0.7);
  CHECK((s.array().abs() <= a.array().abs()).all());
  CHECK_THROWS_AS(soft_threshold(a, -1.0), ArgumentError);
}

TEST_CASE("soft threshold is the exact proximal minimizer") {
  // Separable objective: check each 1x1 and 2x2 entry against a grid search.
  auto prox_obj = [](double z, double x, double tau) {
    return 0.5 * (z - x) * (z - x) + tau * std::abs(z);
  };
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> ud(-3.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double tau = std::abs(ud(gen));
    Matrix x(2, 2);
    for (int i = 0; i < 4; ++i) x(i) = ud(gen);
    const Matrix z = soft_threshold(x, tau);
    double grid_total = 0.0, got_total = 0.0;
    for (int i = 0; i < 4; ++i) {
      double best = INFINITY;
      for (int k = -4000; k <= 4000; ++k) best = std::min(best, prox_obj(k * 1e-3, x(i), tau));
      grid_total += best;
      got_total += prox_obj(z(i), x(i), tau);
      CHECK(prox_obj(z(i), x(i), tau) <= best + 1e-12);
    }
    CHECK(got_total <= grid_total + 1e-12);
  }
}

TEST_CASE("ols_multi") {
  std::mt19937_64 gen(9);
  SUBCASE("identity design") {
    const Matrix y = oracle::random_matrix(gen, 4, 3);
    CHECK((ols_multi(Matrix::Identity(4, 4), y, 0.0) - y).norm() <= 1e-12);
  }
  SUBCASE("noiseless recovery") {
    const Matrix x = oracle::random_matrix(gen, 30, 8);
    const Matrix theta = oracle::random_matrix(gen, 8, 5);
    CHECK((ols_multi(x, x * theta, 0.0) - theta).norm() <= 1e-8);
  }
  SUBCASE("Gaussian elimination oracle") {
    for (int trial = 0; trial < 20; ++trial) {
      const Matrix x = oracle::random_matrix(gen, 4, 2);
      const Matrix y = oracle::random_matrix(gen, 4, 1);
      for (double ridge : {0.0, 1.0}) {
        Matrix a = x.transpose() * x;
        a.diagonal().array() += ridge;
        const Vector expected = oracle::gauss_solve(a, x.transpose() * y);
        CHECK((ols_multi(x, y, ridge).col(0) - expected).norm() <= 1e-10);
      }
    }
  }
  SUBCASE("rank deficiency") {
    const Matrix x = oracle::random_matrix(gen, 3, 6);
    const Matrix y = oracle::random_matrix(gen, 3, 2);
    CHECK_THROWS_AS(ols_multi(x, y, 0.0), RankDeficiencyError);
    CHECK(ols_multi(x, y, 1.0).allFinite());
    CHECK_THROWS_AS(ols_multi(x, y, -1.0), ArgumentError);
    CHECK_THROWS_AS(ols_multi(x, Matrix::Zero(4, 1), 1.0), ArgumentError);
  }
}

TEST_CASE("simplex projection cases") {
  auto proj = [](std::initializer_list<double> v) {
    std::vector<double> w(v);
    return project_simplex(std::span<const double>(w));
  };
  CHECK(proj({0.5, 0.5}).isApprox(Vector::Constant(2, 0.5)));
  const Vector vertex = proj({2.0, 0.0});
  CHECK(vertex(0) == 1.0);
  CHECK(vertex(1) == 0.0);
  CHECK(proj({1.0, 1.0}).isApprox(Vector::Constant(2, 0.5)));
  CHECK_THROWS_AS(project_simplex(Vector()), ArgumentError);
}

TEST_CASE("simplex projection is the nearest feasible point") {
  std::mt19937_64 gen(13);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + trial % 6;
    Vector w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = nd(gen);
    const Vector p = project_simplex(w);
    CHECK((p.array() >= 0.0).all());
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    const double dist = (w - p).norm();
    for (int k = 0; k < 10000; ++k) {
      const Vector q = oracle::random_simplex_point(gen, n);
      if (dist > (w - q).norm() + 1e-12) {
        FAIL("random feasible point is closer than the projection");
      }
    }
  }
}

TEST_CASE("singular value thresholding") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = oracle::random_matrix(gen, 3 + trial % 5, 2 + trial % 7);
    const double tau = 0.3 * (trial % 4);
    SvdFactors f = svd(a);
    for (Eigen::Index i = 0; i < f.d.size(); ++i) f.d(i) = std::max(f.d(i) - tau, 0.0);
    CHECK((singular_value_threshold(a, tau) - f.reconstruct()).norm() <= 1e-9 * (1 + a.norm()));
  }
  const Matrix a = oracle::random_matrix(gen, 4, 4);
  CHECK(singular_value_threshold(a, 1e6).norm() == 0.0);
  CHECK_THROWS_AS(singular_value_threshold(a, -1.0), ArgumentError);
}

TEST_CASE("polar factor") {
  std::mt19937_64 gen(19);
  const Matrix a = oracle::random_matrix(gen, 6, 3);
  const PolarFactor p = polar_factor(a);
  CHECK(p.rank == 3);
  CHECK(orthonormality_error(p.uv) <= 1e-10);
  CHECK(p.nuclear_norm == doctest::Approx(oracle::nuclear_norm(a)).epsilon(1e-10));
  // <polar, a> equals the nuclear norm.
  CHECK((p.uv.array() * a.array()).sum() == doctest::Approx(p.nuclear_norm).epsilon(1e-10));
  const PolarFactor z = polar_factor(Matrix::Zero(3, 2));
  CHECK(z.rank == 0);
  CHECK(z.uv.norm() == 0.0);
  Matrix r1 = Matrix::Zero(3, 3);
  r1.col(0) << 1, 2, 2;
  r1.col(2) = -r1.col(0);
  CHECK(polar_factor(r1).rank == 1);
}
