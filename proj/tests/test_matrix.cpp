#include <catch_amalgamated.hpp>

#include <set>

#include "inrank/matrix.hpp"
#include "inrank/rng.hpp"
#include "test_util.hpp"

using namespace inrank;
using inrank::testing::random_matrix;

TEST_CASE("identity is neutral for matmul") {
  Rng rng(1);
  const Matrix x = random_matrix(3, 5, rng);
  CHECK(matmul(Matrix::identity(3), x) == x);
}

TEST_CASE("2x2 product") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  CHECK(matmul(a, b) == Matrix{{19, 22}, {43, 50}});
}

TEST_CASE("matmul is associative on random chains") {
  Rng rng(7);
  const Matrix a = random_matrix(5, 4, rng);
  const Matrix b = random_matrix(4, 3, rng);
  const Matrix c = random_matrix(3, 2, rng);
  const Matrix left = matmul(matmul(a, b), c);
  const Matrix right = matmul(a, matmul(b, c));
  CHECK(inrank::testing::rel_fro(left, right) <= 1e-12);
}

TEST_CASE("matmul shape errors name both shapes") {
  const Matrix a(2, 3);
  const Matrix b(4, 2);
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("transposed products agree with explicit transposes") {
  Rng rng(3);
  const Matrix a = random_matrix(6, 4, rng);
  const Matrix b = random_matrix(6, 5, rng);
  const Matrix c = random_matrix(7, 4, rng);
  CHECK(inrank::testing::max_abs_diff(matmul_tn(a, b), matmul(a.transpose(), b)) <= 1e-14);
  CHECK(inrank::testing::max_abs_diff(matmul_nt(a, c), matmul(a, c.transpose())) <= 1e-14);
}

TEST_CASE("constructors validate shapes") {
  CHECK_THROWS_AS(Matrix(0, 3), ShapeError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3)), ShapeError);
  CHECK_THROWS_AS((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST_CASE("concatenation preserves blocks") {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5}, {6}};
  CHECK(hconcat(a, b) == Matrix{{1, 2, 5}, {3, 4, 6}});
  CHECK(vconcat(a, Matrix{{7, 8}}) == Matrix{{1, 2}, {3, 4}, {7, 8}});
  CHECK_THROWS_AS(hconcat(a, Matrix(3, 1)), ShapeError);
}

TEST_CASE("rng is deterministic and substreams are independent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng base(42);
  Rng s1 = base.split("layer0");
  Rng s2 = base.split("layer1");
  CHECK(s1.next_u64() != s2.next_u64());

  // Consuming one substream never perturbs another.
  Rng base2(42);
  Rng t1 = base2.split("layer0");
  for (int i = 0; i < 50; ++i) (void)t1.normal();
  Rng t2 = base2.split("layer1");
  Rng s2b = Rng(42).split("layer1");
  CHECK(t2.next_u64() == s2b.next_u64());
}

TEST_CASE("rng uniform and normal moments") {
  Rng rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);

  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    seen.insert(rng.below(10));
  }
  CHECK(seen.size() == 10);
}
