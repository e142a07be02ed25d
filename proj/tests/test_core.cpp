#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "homog/core.hpp"
#include "homog/hash.hpp"

using namespace homog;

TEST_CASE("vector arithmetic") {
    Vec<2> a{{1.0, 2.0}}, b{{3.0, -1.0}};
    CHECK(dot(a, b) == doctest::Approx(1.0));
    CHECK(norm(Vec<2>{{3.0, 4.0}}) == doctest::Approx(5.0));
    Vec<2> c = a + 2.0 * b;
    CHECK(c[0] == doctest::Approx(7.0));
    CHECK(c[1] == doctest::Approx(0.0));
}

TEST_CASE("symmetric matrix bounds check") {
    auto id = SymMat<2>::identity();
    CHECK(matrix_within(id, 1.0, 4.0));
    auto big = SymMat<2>::identity(5.0);
    CHECK_FALSE(matrix_within(big, 1.0, 4.0));
    SymMat<2> aniso = SymMat<2>::diag(Vec<2>{{1.0, 4.0}});
    CHECK(matrix_within(aniso, 1.0, 4.0));
    CHECK_FALSE(matrix_within(aniso, 2.0, 4.0));

    SymMat<3> m3 = SymMat<3>::diag(Vec<3>{{1.0, 2.0, 3.0}});
    m3(0, 1) = m3(1, 0) = 0.1;
    CHECK(matrix_within(m3, 0.5, 4.0));
}

TEST_CASE("kahan summation recovers small increments") {
    KahanSum s;
    s.add(1e16);
    for (int i = 0; i < 1000; ++i) s.add(1.0);
    s.add(-1e16);
    CHECK(s.value() == doctest::Approx(1000.0));
}

TEST_CASE("sample stats") {
    std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
    auto s = sample_stats(xs);
    CHECK(s.mean == doctest::Approx(2.5));
    CHECK(s.variance == doctest::Approx(5.0 / 3.0));
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(s.mean >= s.min);
    CHECK(s.mean <= s.max);
}

TEST_CASE("floor_div handles negatives") {
    CHECK(floor_div(7, 3) == 2);
    CHECK(floor_div(-7, 3) == -3);
    CHECK(floor_div(-6, 3) == -2);
    CHECK(floor_div(0, 5) == 0);
}

TEST_CASE("mix64 is deterministic and spreads") {
    CHECK(mix64(0) == mix64(0));
    CHECK(mix64(1) != mix64(2));
    std::array<std::int64_t, 2> z{{-3, 7}};
    CHECK(cell_key<2>(42, z) == cell_key<2>(42, z));
    CHECK(cell_key<2>(42, z) != cell_key<2>(43, z));
    double u = uniform01(cell_key<2>(42, z));
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
}

TEST_CASE("derived member seeds differ") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}
