#include "fhn/assembly.hpp"
#include "fhn/dg_space.hpp"
#include "fhn/quadrature.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace fhn;

namespace {

std::shared_ptr<const DgSpace> make_space(double L, double H, int nx, int ny)
{
    auto mesh = std::make_shared<const Mesh>(build_channel_mesh({L, H, nx, ny}));
    return std::make_shared<const DgSpace>(mesh);
}

// exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!
double monomial_integral(int a, int b)
{
    return std::tgamma(a + 1.0) * std::tgamma(b + 1.0) / std::tgamma(a + b + 3.0);
}

} // namespace

TEST(Quadrature, TriangleRuleExactToDegreeFour)
{
    const auto& r = triangle_rule();
    double wsum = 0.0;
    for (double w : r.weights) wsum += w;
    EXPECT_NEAR(wsum, 0.5, 1e-14);
    for (int a = 0; a <= 4; ++a)
        for (int b = 0; a + b <= 4; ++b) {
            double s = 0.0;
            for (std::size_t q = 0; q < r.size(); ++q)
                s += r.weights[q] * std::pow(r.points[q][0], a) * std::pow(r.points[q][1], b);
            EXPECT_NEAR(s, monomial_integral(a, b), 1e-14) << "x^" << a << " y^" << b;
        }
}

TEST(Quadrature, EdgeRuleExactToDegreeFive)
{
    const auto& r = edge_rule();
    for (int p = 0; p <= 5; ++p) {
        double s = 0.0;
        for (std::size_t q = 0; q < r.size(); ++q) s += r.weights[q] * std::pow(r.points[q][0], p);
        EXPECT_NEAR(s, 1.0 / (p + 1), 1e-15) << "degree " << p;
    }
}

TEST(DgSpace, LocalDimension)
{
    EXPECT_EQ(DgSpace::local_dim, 3);
    const auto space = make_space(2.0, 1.0, 3, 2);
    EXPECT_EQ(space->dim(), 12 * 3);
}

TEST(DgCore, EvalConstantAndNodal)
{
    const auto space = make_space(2.0, 1.0, 3, 2);
    const DgField c = constant_field(space, 2.5);
    EXPECT_DOUBLE_EQ(eval(c, 4, {0.2, 0.3}), 2.5);

    DgField u(space);
    u.coeffs[space->dof(5, 0)] = 1.0;
    EXPECT_DOUBLE_EQ(eval(u, 5, {0.0, 0.0}), 1.0);
    EXPECT_DOUBLE_EQ(eval(u, 5, {1.0, 0.0}), 0.0);
    EXPECT_DOUBLE_EQ(eval(u, 4, {0.0, 0.0}), 0.0);
    EXPECT_THROW((void)eval(u, 12, {0.0, 0.0}), std::out_of_range);
    EXPECT_THROW((void)eval(u, -1, {0.0, 0.0}), std::out_of_range);
}

TEST(DgCore, LinearReproductionAndZeroJumps)
{
    const auto space = make_space(3.0, 2.0, 4, 3);
    auto f = [](const Point& x) { return 1.5 - 0.7 * x[0] + 2.0 * x[1]; };
    const DgField u = interpolate(space, f);
    for (int k = 0; k < space->num_elements(); ++k) {
        const Point c = space->mesh().centroid(k);
        EXPECT_NEAR(eval(u, k, {1.0 / 3.0, 1.0 / 3.0}), f(c), 1e-14);
    }
    const DgField x1 = interpolate(space, [](const Point& x) { return x[0]; });
    EXPECT_NEAR(eval_physical(x1, 7, space->mesh().centroid(7)), space->mesh().centroid(7)[0], 1e-14);
    for (int e = 0; e < space->mesh().num_edges(); ++e) {
        if (space->mesh().edges[e].is_boundary()) continue;
        for (double s : {0.0, 0.3, 1.0}) {
            const auto ja = jump_average(u, e, s);
            EXPECT_NEAR(ja.jump[0], 0.0, 1e-14);
            EXPECT_NEAR(ja.jump[1], 0.0, 1e-14);
        }
    }
    // L2 projection of a linear function is the function itself
    const DgField p = l2_project(space, f);
    for (std::size_t i = 0; i < p.coeffs.size(); ++i) EXPECT_NEAR(p.coeffs[i], u.coeffs[i], 1e-12);
}

TEST(DgCore, JumpAverageDefinitions)
{
    const auto space = make_space(1.0, 1.0, 1, 1);
    const Mesh& m = space->mesh();
    int interior = -1;
    for (int e = 0; e < m.num_edges(); ++e)
        if (!m.edges[e].is_boundary()) interior = e;
    ASSERT_GE(interior, 0);
    const Edge& e = m.edges[interior];
    DgField u(space);
    for (int j = 0; j < 3; ++j) u.coeffs[space->dof(e.left, j)] = 1.0;
    const auto ja = jump_average(u, interior, 0.4);
    EXPECT_NEAR(ja.jump[0], e.normal[0], 1e-15);
    EXPECT_NEAR(ja.jump[1], e.normal[1], 1e-15);
    EXPECT_DOUBLE_EQ(ja.average, 0.5);

    const DgField three = constant_field(space, 3.0);
    for (int b = 0; b < m.num_edges(); ++b) {
        if (!m.edges[b].is_boundary()) continue;
        const auto jb = jump_average(three, b, 0.5);
        EXPECT_DOUBLE_EQ(jb.average, 3.0);
        EXPECT_NEAR(jb.jump[0], 3.0 * m.edges[b].normal[0], 1e-15);
        EXPECT_NEAR(jb.jump[1], 3.0 * m.edges[b].normal[1], 1e-15);
    }
}

TEST(DgCore, L2Norms)
{
    const auto space = make_space(1.0, 1.0, 8, 8);
    const SparseMatrix mass = assemble_mass(*space);
    EXPECT_DOUBLE_EQ(l2_norm(DgField(space), mass), 0.0);
    EXPECT_NEAR(l2_norm(constant_field(space, 1.0), mass), 1.0, 1e-14);
    const DgField x1 = interpolate(space, [](const Point& x) { return x[0]; });
    EXPECT_NEAR(l2_norm(x1, mass), 1.0 / std::sqrt(3.0), 1e-14);

    const auto other = make_space(1.0, 1.0, 2, 2);
    EXPECT_THROW((void)l2_norm(constant_field(other, 1.0), mass), std::invalid_argument);
}

TEST(DgCore, ProjectionOfStepConservesMass)
{
    const auto space = make_space(100.0, 5.0, 200, 10);
    const SparseMatrix mass = assemble_mass(*space);
    const DgField y0 = l2_project(space, [](const Point& x) { return x[0] <= 0.1 ? 0.1 : 0.0; });
    const Vector ones(space->dim(), 1.0);
    // integral of the projection equals integral of the data, 0.1 * 0.1 * 5
    EXPECT_NEAR(dot(ones, mass * y0.coeffs), 0.05, 1e-3 * 0.05);
}

TEST(DgCore, CsvAndBinaryRoundTrip)
{
    const auto space = make_space(2.0, 1.0, 3, 2);
    std::mt19937 rng(42);
    std::normal_distribution<double> n;
    DgField u(space);
    for (double& c : u.coeffs) c = n(rng);

    std::stringstream csv;
    write_field_csv(csv, u);
    EXPECT_EQ(read_field_csv(csv, space).coeffs, u.coeffs);

    std::stringstream bin;
    write_field_binary(bin, u);
    EXPECT_EQ(read_field_binary(bin, space).coeffs, u.coeffs);

    std::stringstream bad;
    write_field_binary(bad, u);
    EXPECT_THROW(read_field_binary(bad, make_space(2.0, 1.0, 1, 1)), std::runtime_error);
}

TEST(DgCore, VtkExportHasAllNodes)
{
    const auto space = make_space(1.0, 1.0, 2, 1);
    const DgField u = constant_field(space, 1.0);
    std::ostringstream os;
    write_field_vtk(os, {{"y", &u}});
    EXPECT_NE(os.str().find("POINT_DATA 12"), std::string::npos);
    EXPECT_NE(os.str().find("SCALARS y double 1"), std::string::npos);
}
