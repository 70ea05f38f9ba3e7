#include "fhn/mesh.hpp"
#include "fhn/quadrature.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

using namespace fhn;

namespace {

int count_boundary(const Mesh& m)
{
    int n = 0;
    for (const auto& e : m.edges) n += e.is_boundary();
    return n;
}

} // namespace

TEST(Mesh, UnitSquareSingleCell)
{
    const Mesh m = build_channel_mesh({1.0, 1.0, 1, 1});
    EXPECT_EQ(m.num_elements(), 2);
    EXPECT_EQ(m.num_edges(), 5);
    EXPECT_EQ(count_boundary(m), 4);
    for (const auto& e : m.edges)
        if (e.is_boundary()) {
            EXPECT_EQ(e.cls, EdgeClass::NeumannBoundary);
        }
}

TEST(Mesh, PaperResolutions)
{
    const Mesh coarse = build_channel_mesh({100.0, 5.0, 200, 10});
    EXPECT_EQ(coarse.num_elements(), 4000);
    EXPECT_DOUBLE_EQ(coarse.vertices[1][0] - coarse.vertices[0][0], 0.5);
    EXPECT_DOUBLE_EQ(coarse.vertices[201][1] - coarse.vertices[0][1], 0.5);

    const Mesh fine = build_channel_mesh({100.0, 5.0, 800, 40});
    EXPECT_EQ(fine.num_elements(), 64000);
    EXPECT_DOUBLE_EQ(fine.vertices[1][0], 0.125);
}

TEST(Mesh, RejectsInvalidGeometry)
{
    EXPECT_THROW(build_channel_mesh({0.0, 1.0, 1, 1}), std::invalid_argument);
    EXPECT_THROW(build_channel_mesh({1.0, -1.0, 1, 1}), std::invalid_argument);
    EXPECT_THROW(build_channel_mesh({1.0, 1.0, 0, 1}), std::invalid_argument);
    EXPECT_THROW(build_channel_mesh({1.0, 1.0, 2, 0}), std::invalid_argument);
}

TEST(Mesh, StructuralInvariants)
{
    const Mesh m = build_channel_mesh({7.0, 3.0, 9, 5});
    double area = 0.0;
    for (int k = 0; k < m.num_elements(); ++k) {
        EXPECT_GT(m.area(k), 0.0);
        area += m.area(k);
    }
    EXPECT_NEAR(area, 21.0, 1e-12 * 21.0);

    std::vector<int> incidence(m.num_elements(), 0);
    for (int id = 0; id < m.num_edges(); ++id) {
        const Edge& e = m.edges[id];
        EXPECT_NEAR(std::hypot(e.normal[0], e.normal[1]), 1.0, 1e-14);
        // every edge appears in the edge list of its incident elements
        for (int k : {e.left, e.right}) {
            if (k < 0) continue;
            const auto& ee = m.element_edges[k];
            EXPECT_TRUE(ee[0] == id || ee[1] == id || ee[2] == id);
            ++incidence[k];
        }
        // normal points away from the left element
        const Point c = m.centroid(e.left);
        const Point mid = m.midpoint(e);
        EXPECT_GT(dot(e.normal, Point{mid[0] - c[0], mid[1] - c[1]}), 0.0);
        if (!e.is_boundary()) {
            EXPECT_NE(e.left, e.right);
        }
    }
    for (int n : incidence) EXPECT_EQ(n, 3);

    // conformity: every vertex pair is listed once
    std::set<std::pair<int, int>> seen;
    for (const auto& e : m.edges) EXPECT_TRUE(seen.insert(std::minmax(e.vertices[0], e.vertices[1])).second);
    // Euler: V - E + F = 1 for a disc
    EXPECT_EQ(static_cast<int>(m.vertices.size()) - m.num_edges() + m.num_elements(), 1);
}

TEST(Mesh, RefinementHalvesDiameterAndQuartersArea)
{
    const Mesh a = build_channel_mesh({100.0, 5.0, 20, 2});
    const Mesh b = build_channel_mesh({100.0, 5.0, 40, 4});
    EXPECT_NEAR(b.max_diameter(), 0.5 * a.max_diameter(), 1e-12);
    EXPECT_EQ(b.num_elements(), 4 * a.num_elements());
}

TEST(Mesh, ClassifyInflowOutflow)
{
    const ChannelGeometry g{10.0, 5.0, 10, 5};
    const auto v = VelocityField::from_vmax(16.0, 5.0);
    const Mesh m = classify_edges(build_channel_mesh(g), {}, v);
    int left = 0;
    for (const auto& e : m.edges) {
        if (!e.is_boundary()) continue;
        EXPECT_EQ(e.cls, EdgeClass::NeumannBoundary);
        const Point mid = m.midpoint(e);
        if (std::abs(mid[0]) < 1e-12) {
            EXPECT_TRUE(e.inflow);
            ++left;
        } else {
            // walls carry V.n = 0 (outflow by the >= convention), right end is outflow
            EXPECT_FALSE(e.inflow);
        }
    }
    EXPECT_EQ(left, 5);
}

TEST(Mesh, DirichletSidesSelection)
{
    const ChannelGeometry g{2.0, 1.0, 4, 2};
    const Mesh m = classify_edges(build_channel_mesh(g), sides_predicate(SideLeft | SideTop, g), VelocityField{});
    int dirichlet = 0;
    for (const auto& e : m.edges) dirichlet += e.cls == EdgeClass::DirichletBoundary;
    EXPECT_EQ(dirichlet, 2 + 4);
}

TEST(Mesh, DivergenceTheoremOnBoundaryFlux)
{
    const ChannelGeometry g{100.0, 5.0, 50, 6};
    const Mesh m = build_channel_mesh(g);
    const auto v = VelocityField::from_vmax(64.0, 5.0);
    const auto& rule = edge_rule();
    double flux = 0.0, inflow = 0.0;
    for (const auto& e : m.edges) {
        if (!e.is_boundary()) continue;
        const Point& a = m.vertices[e.vertices[0]];
        const Point& b = m.vertices[e.vertices[1]];
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double s = rule.points[q][0];
            const Point x{a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])};
            const double vn = dot(v(x), e.normal) * rule.weights[q] * e.length;
            flux += vn;
            if (vn < 0) inflow -= vn;
        }
    }
    EXPECT_GT(inflow, 100.0);
    EXPECT_NEAR(flux, 0.0, 1e-12 * inflow);
}

TEST(Mesh, PointLocation)
{
    const Mesh m = build_channel_mesh({4.0, 2.0, 4, 2});
    EXPECT_EQ(m.elements_containing({0.75, 0.25}).size(), 1u);
    // interior vertex shared by six triangles
    EXPECT_EQ(m.elements_containing({1.0, 1.0}).size(), 6u);
}

TEST(Mesh, VtkExport)
{
    const Mesh m = build_channel_mesh({1.0, 1.0, 1, 1});
    std::ostringstream os;
    write_mesh_vtk(os, m);
    EXPECT_NE(os.str().find("CELLS 2 8"), std::string::npos);
    EXPECT_NE(os.str().find("POINTS 4 double"), std::string::npos);
}
