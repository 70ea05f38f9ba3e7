#pragma once

#include "fhn/velocity.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fhn {

struct ChannelGeometry {
    double length = 1.0;
    double height = 1.0;
    int nx = 1;
    int ny = 1;

    void validate() const
    {
        if (!(length > 0.0) || !(height > 0.0))
            throw std::invalid_argument("ChannelGeometry: length and height must be positive");
        if (nx < 1 || ny < 1)
            throw std::invalid_argument("ChannelGeometry: cell counts must be >= 1");
    }
};

enum class EdgeClass : std::uint8_t { Interior, DirichletBoundary, NeumannBoundary };

struct Edge {
    std::array<int, 2> vertices{};
    int left = -1;  ///< element on the side opposite to the normal
    int right = -1; ///< -1 on the boundary
    Point normal{}; ///< unit, from left to right (outward on the boundary)
    double length = 0.0;
    EdgeClass cls = EdgeClass::NeumannBoundary;
    bool inflow = false; ///< boundary only: V.n < 0 at the midpoint

    [[nodiscard]] bool is_boundary() const { return right < 0; }
};

/// Conforming triangulation of a rectangle with edge connectivity.
class Mesh {
public:
    std::vector<Point> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Edge> edges;
    std::vector<std::array<int, 3>> element_edges; ///< local edge k is opposite local vertex k
    std::vector<double> diameters;
    ChannelGeometry geometry;

    [[nodiscard]] int num_elements() const { return static_cast<int>(triangles.size()); }
    [[nodiscard]] int num_edges() const { return static_cast<int>(edges.size()); }

    [[nodiscard]] double area(int k) const
    {
        const auto& t = triangles[k];
        const Point& a = vertices[t[0]];
        const Point& b = vertices[t[1]];
        const Point& c = vertices[t[2]];
        return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
    }

    [[nodiscard]] Point centroid(int k) const
    {
        const auto& t = triangles[k];
        Point c{0.0, 0.0};
        for (int v : t) {
            c[0] += vertices[v][0] / 3.0;
            c[1] += vertices[v][1] / 3.0;
        }
        return c;
    }

    [[nodiscard]] Point midpoint(const Edge& e) const
    {
        const Point& a = vertices[e.vertices[0]];
        const Point& b = vertices[e.vertices[1]];
        return {0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])};
    }

    [[nodiscard]] double max_diameter() const
    {
        return diameters.empty() ? 0.0 : *std::max_element(diameters.begin(), diameters.end());
    }

    /// Elements whose closure contains x (up to a small tolerance).
    [[nodiscard]] std::vector<int> elements_containing(const Point& x) const;
};

namespace detail {

inline double dist(const Point& a, const Point& b) { return std::hypot(b[0] - a[0], b[1] - a[1]); }

} // namespace detail

/// Structured nx x ny grid of rectangles, each cut along the lower-left to
/// upper-right diagonal. Boundary edges start out Neumann.
inline Mesh build_channel_mesh(const ChannelGeometry& geom)
{
    geom.validate();
    Mesh mesh;
    mesh.geometry = geom;
    const int nvx = geom.nx + 1;
    const double dx = geom.length / geom.nx;
    const double dy = geom.height / geom.ny;

    mesh.vertices.reserve(static_cast<std::size_t>(nvx) * (geom.ny + 1));
    for (int j = 0; j <= geom.ny; ++j) {
        // pin the last row/column to the exact extent
        const double y = j == geom.ny ? geom.height : j * dy;
        for (int i = 0; i <= geom.nx; ++i) {
            const double x = i == geom.nx ? geom.length : i * dx;
            mesh.vertices.push_back({x, y});
        }
    }

    auto vid = [nvx](int i, int j) { return j * nvx + i; };
    mesh.triangles.reserve(2 * static_cast<std::size_t>(geom.nx) * geom.ny);
    for (int j = 0; j < geom.ny; ++j) {
        for (int i = 0; i < geom.nx; ++i) {
            const int a = vid(i, j), b = vid(i + 1, j), c = vid(i + 1, j + 1), d = vid(i, j + 1);
            mesh.triangles.push_back({a, b, c});
            mesh.triangles.push_back({a, c, d});
        }
    }

    const int ne = mesh.num_elements();
    mesh.element_edges.assign(ne, {-1, -1, -1});
    mesh.diameters.assign(ne, 0.0);
    std::map<std::pair<int, int>, int> lookup;
    for (int k = 0; k < ne; ++k) {
        const auto& t = mesh.triangles[k];
        for (int loc = 0; loc < 3; ++loc) {
            const int p = t[(loc + 1) % 3];
            const int q = t[(loc + 2) % 3];
            const auto key = std::minmax(p, q);
            auto it = lookup.find(key);
            if (it == lookup.end()) {
                Edge e;
                e.vertices = {p, q};
                e.left = k;
                const Point& xp = mesh.vertices[p];
                const Point& xq = mesh.vertices[q];
                e.length = detail::dist(xp, xq);
                // counterclockwise triangle: the outward normal of edge p->q is (dy, -dx)
                e.normal = {(xq[1] - xp[1]) / e.length, -(xq[0] - xp[0]) / e.length};
                const int id = mesh.num_edges();
                mesh.edges.push_back(e);
                lookup.emplace(key, id);
                mesh.element_edges[k][loc] = id;
            } else {
                Edge& e = mesh.edges[it->second];
                if (e.right >= 0) throw std::logic_error("build_channel_mesh: edge shared by more than two elements");
                e.right = k;
                e.cls = EdgeClass::Interior;
                mesh.element_edges[k][loc] = it->second;
            }
        }
        const Point& a = mesh.vertices[t[0]];
        const Point& b = mesh.vertices[t[1]];
        const Point& c = mesh.vertices[t[2]];
        mesh.diameters[k] = std::max({detail::dist(a, b), detail::dist(b, c), detail::dist(c, a)});
    }
    return mesh;
}

using BoundaryPredicate = std::function<bool(const Point& midpoint)>;

/// Sides of the channel, usable as a Dirichlet selector.
enum ChannelSide : unsigned { SideNone = 0, SideLeft = 1, SideRight = 2, SideBottom = 4, SideTop = 8 };

inline BoundaryPredicate sides_predicate(unsigned sides, const ChannelGeometry& geom)
{
    if (sides == SideNone) return {};
    return [sides, geom](const Point& m) {
        const double tol = 1e-12 * std::max(geom.length, geom.height);
        return ((sides & SideLeft) && std::abs(m[0]) <= tol) ||
               ((sides & SideRight) && std::abs(m[0] - geom.length) <= tol) ||
               ((sides & SideBottom) && std::abs(m[1]) <= tol) ||
               ((sides & SideTop) && std::abs(m[1] - geom.height) <= tol);
    };
}

/// Marks Dirichlet boundary edges and tags inflow (V.n < 0 at the midpoint).
/// Ties V.n == 0 count as outflow.
inline Mesh classify_edges(Mesh mesh, const BoundaryPredicate& dirichlet, const VelocityField& velocity)
{
    for (Edge& e : mesh.edges) {
        if (!e.is_boundary()) {
            e.cls = EdgeClass::Interior;
            e.inflow = false;
            continue;
        }
        const Point m = mesh.midpoint(e);
        e.cls = (dirichlet && dirichlet(m)) ? EdgeClass::DirichletBoundary : EdgeClass::NeumannBoundary;
        e.inflow = dot(velocity(m), e.normal) < 0.0;
    }
    return mesh;
}

inline std::vector<int> Mesh::elements_containing(const Point& x) const
{
    std::vector<int> found;
    const double tol = 1e-12 * std::max(geometry.length, geometry.height);
    auto test = [&](int k) {
        const auto& t = triangles[k];
        const Point& a = vertices[t[0]];
        const Point& b = vertices[t[1]];
        const Point& c = vertices[t[2]];
        const double det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        const double l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        const double l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        const double l0 = 1.0 - l1 - l2;
        if (l0 >= -tol && l1 >= -tol && l2 >= -tol) found.push_back(k);
    };
    // structured layout: only scan the neighbouring cells
    const double dx = geometry.length / geometry.nx;
    const double dy = geometry.height / geometry.ny;
    const int ci = static_cast<int>(std::floor(x[0] / dx));
    const int cj = static_cast<int>(std::floor(x[1] / dy));
    for (int j = cj - 1; j <= cj + 1; ++j) {
        for (int i = ci - 1; i <= ci + 1; ++i) {
            if (i < 0 || j < 0 || i >= geometry.nx || j >= geometry.ny) continue;
            const int cell = j * geometry.nx + i;
            test(2 * cell);
            test(2 * cell + 1);
        }
    }
    std::sort(found.begin(), found.end());
    return found;
}

/// Legacy ASCII VTK unstructured grid of the triangulation.
inline void write_mesh_vtk(std::ostream& os, const Mesh& mesh)
{
    os << "# vtk DataFile Version 3.0\nchannel mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << "POINTS " << mesh.vertices.size() << " double\n";
    os.precision(17);
    for (const auto& v : mesh.vertices) os << v[0] << ' ' << v[1] << " 0\n";
    os << "CELLS " << mesh.triangles.size() << ' ' << 4 * mesh.triangles.size() << '\n';
    for (const auto& t : mesh.triangles) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    os << "CELL_TYPES " << mesh.triangles.size() << '\n';
    for (std::size_t k = 0; k < mesh.triangles.size(); ++k) os << "5\n";
}

} // namespace fhn
