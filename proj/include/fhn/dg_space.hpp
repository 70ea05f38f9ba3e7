#pragma once

#include "fhn/mesh.hpp"
#include "fhn/quadrature.hpp"
#include "fhn/sparse.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fhn {

/// Discontinuous piecewise-linear space on a triangulation. The basis is
/// nodal at the triangle vertices; coefficients are element-major.
class DgSpace {
public:
    static constexpr int degree = 1;
    static constexpr int local_dim = (degree + 1) * (degree + 2) / 2;

    explicit DgSpace(std::shared_ptr<const Mesh> mesh) : mesh_(std::move(mesh))
    {
        if (!mesh_) throw std::invalid_argument("DgSpace: null mesh");
        const int ne = mesh_->num_elements();
        grads_.resize(ne);
        dets_.resize(ne);
        for (int k = 0; k < ne; ++k) {
            const auto& t = mesh_->triangles[k];
            const Point& a = mesh_->vertices[t[0]];
            const Point& b = mesh_->vertices[t[1]];
            const Point& c = mesh_->vertices[t[2]];
            const double j00 = b[0] - a[0], j01 = c[0] - a[0];
            const double j10 = b[1] - a[1], j11 = c[1] - a[1];
            const double det = j00 * j11 - j01 * j10;
            if (!(det > 0.0)) throw std::invalid_argument("DgSpace: degenerate or clockwise triangle");
            dets_[k] = det;
            // gradients of xi and eta with respect to x: rows of J^{-1}
            const Point dxi{j11 / det, -j01 / det};
            const Point deta{-j10 / det, j00 / det};
            grads_[k] = {Point{-dxi[0] - deta[0], -dxi[1] - deta[1]}, dxi, deta};
        }
    }

    [[nodiscard]] const Mesh& mesh() const { return *mesh_; }
    [[nodiscard]] const std::shared_ptr<const Mesh>& mesh_ptr() const { return mesh_; }
    [[nodiscard]] int num_elements() const { return mesh_->num_elements(); }
    [[nodiscard]] int dim() const { return num_elements() * local_dim; }
    [[nodiscard]] int dof(int element, int local) const { return element * local_dim + local; }

    /// |det J| = 2 * area
    [[nodiscard]] double jacobian_det(int k) const { return dets_[k]; }
    [[nodiscard]] const Point& grad(int k, int j) const { return grads_[k][j]; }

    static std::array<double, 3> basis(const Point& ref) { return {1.0 - ref[0] - ref[1], ref[0], ref[1]}; }

    [[nodiscard]] Point to_physical(int k, const Point& ref) const
    {
        const auto phi = basis(ref);
        const auto& t = mesh_->triangles[k];
        Point x{0.0, 0.0};
        for (int j = 0; j < 3; ++j) {
            x[0] += phi[j] * mesh_->vertices[t[j]][0];
            x[1] += phi[j] * mesh_->vertices[t[j]][1];
        }
        return x;
    }

    [[nodiscard]] Point to_reference(int k, const Point& x) const
    {
        const Point& a = mesh_->vertices[mesh_->triangles[k][0]];
        const Point d{x[0] - a[0], x[1] - a[1]};
        return {dot(grads_[k][1], d), dot(grads_[k][2], d)};
    }

private:
    std::shared_ptr<const Mesh> mesh_;
    std::vector<std::array<Point, 3>> grads_;
    std::vector<double> dets_;
};

/// Coefficient vector of one scalar field on a DgSpace.
struct DgField {
    std::shared_ptr<const DgSpace> space;
    Vector coeffs;

    DgField() = default;
    explicit DgField(std::shared_ptr<const DgSpace> s) : space(std::move(s)), coeffs(space->dim(), 0.0) {}
    DgField(std::shared_ptr<const DgSpace> s, Vector c) : space(std::move(s)), coeffs(std::move(c))
    {
        if (static_cast<int>(coeffs.size()) != space->dim())
            throw std::invalid_argument("DgField: coefficient count does not match the space");
    }

    [[nodiscard]] double operator()(int element, int local) const
    {
        return coeffs[static_cast<std::size_t>(element) * DgSpace::local_dim + local];
    }
};

inline void check_element(const DgSpace& space, int element)
{
    if (element < 0 || element >= space.num_elements())
        throw std::out_of_range("element index " + std::to_string(element) + " out of range");
}

/// Value of the field on `element` at reference coordinates `ref`.
inline double eval(const DgField& field, int element, const Point& ref)
{
    check_element(*field.space, element);
    const auto phi = DgSpace::basis(ref);
    double v = 0.0;
    for (int j = 0; j < 3; ++j) v += field(element, j) * phi[j];
    return v;
}

inline double eval_physical(const DgField& field, int element, const Point& x)
{
    return eval(field, element, field.space->to_reference(element, x));
}

struct JumpAverage {
    Point jump;
    double average;
};

/// Jump and average across `edge` at the point x(s) = (1-s) v0 + s v1.
/// Interior: jump = y_K n_K + y_Ke n_Ke with n_Ke = -n_K. Boundary: jump = y n.
inline JumpAverage jump_average(const DgField& field, int edge, double s)
{
    const Mesh& mesh = field.space->mesh();
    if (edge < 0 || edge >= mesh.num_edges()) throw std::out_of_range("jump_average: edge out of range");
    const Edge& e = mesh.edges[edge];
    const Point& a = mesh.vertices[e.vertices[0]];
    const Point& b = mesh.vertices[e.vertices[1]];
    const Point x{(1.0 - s) * a[0] + s * b[0], (1.0 - s) * a[1] + s * b[1]};
    const double vl = eval_physical(field, e.left, x);
    if (e.is_boundary()) return {{vl * e.normal[0], vl * e.normal[1]}, vl};
    const double vr = eval_physical(field, e.right, x);
    return {{(vl - vr) * e.normal[0], (vl - vr) * e.normal[1]}, 0.5 * (vl + vr)};
}

/// Nodal interpolation of f (exact for linear f).
inline DgField interpolate(const std::shared_ptr<const DgSpace>& space, const std::function<double(const Point&)>& f)
{
    DgField u(space);
    const Mesh& mesh = space->mesh();
    for (int k = 0; k < mesh.num_elements(); ++k)
        for (int j = 0; j < 3; ++j) u.coeffs[space->dof(k, j)] = f(mesh.vertices[mesh.triangles[k][j]]);
    return u;
}

inline DgField constant_field(const std::shared_ptr<const DgSpace>& space, double c)
{
    DgField u(space);
    std::fill(u.coeffs.begin(), u.coeffs.end(), c);
    return u;
}
/// integrated accurately.
/// L2 projection onto the DG space. The load integrals use adaptive sub-triangle
/// quadrature, so data with jumps inside an element is captured to within
/// 2^-max_depth of the element size.
inline DgField l2_project(const std::shared_ptr<const DgSpace>& space, const std::function<double(const Point&)>& f,
                          int max_depth = 12)
{
    using Tri = std::array<Point, 3>;
    using Moments = std::array<double, 3>;
    const auto& rule = triangle_rule();
    // reference-element mass inverse: M_ref = (1/24)[[2,1,1],[1,2,1],[1,1,2]]
    constexpr double minv[3][3] = {{18, -6, -6}, {-6, 18, -6}, {-6, -6, 18}};
    auto mid = [](const Point& p, const Point& q) { return Point{0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])}; };
    auto split = [&](const Tri& t) {
        const Point m01 = mid(t[0], t[1]), m12 = mid(t[1], t[2]), m20 = mid(t[2], t[0]);
        return std::array<Tri, 4>{Tri{t[0], m01, m20}, Tri{m01, t[1], m12}, Tri{m20, m12, t[2]}, Tri{m12, m20, m01}};
    };
    DgField u(space);
    for (int k = 0; k < space->num_elements(); ++k) {
        auto moments = [&](const Tri& t) {
            const double det = std::abs((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) -
                                        (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]));
            Moments m{0.0, 0.0, 0.0};
            for (std::size_t q = 0; q < rule.size(); ++q) {
                const auto lam = DgSpace::basis(rule.points[q]);
                Point ref{0.0, 0.0};
                for (int i = 0; i < 3; ++i) {
                    ref[0] += lam[i] * t[i][0];
                    ref[1] += lam[i] * t[i][1];
                }
                const double w = rule.weights[q] * det * f(space->to_physical(k, ref));
                const auto phi = DgSpace::basis(ref);
                for (int i = 0; i < 3; ++i) m[i] += w * phi[i];
            }
            return m;
        };
        // accept a sub-triangle once its four children agree with it
        std::function<Moments(const Tri&, const Moments&, int)> adapt = [&](const Tri& t, const Moments& coarse,
                                                                          int depth) {
            const auto kids = split(t);
            std::array<Moments, 4> km;
            Moments fine{0.0, 0.0, 0.0};
            for (int c = 0; c < 4; ++c) {
                km[c] = moments(kids[c]);
                for (int i = 0; i < 3; ++i) fine[i] += km[c][i];
            }
            double diff = 0.0, scale = 0.0;
            for (int i = 0; i < 3; ++i) {
                diff = std::max(diff, std::abs(fine[i] - coarse[i]));
                scale = std::max(scale, std::abs(fine[i]));
            }
            if (depth >= max_depth || diff <= 1e-12 + 1e-10 * scale) return fine;
            Moments sum{0.0, 0.0, 0.0};
            for (int c = 0; c < 4; ++c) {
                const Moments r = adapt(kids[c], km[c], depth + 1);
                for (int i = 0; i < 3; ++i) sum[i] += r[i];
            }
            return sum;
        };
        const Tri ref{Point{0, 0}, Point{1, 0}, Point{0, 1}};
        const Moments rhs = adapt(ref, moments(ref), 1);
        for (int i = 0; i < 3; ++i) {
            double c = 0.0;
            for (int j = 0; j < 3; ++j) c += minv[i][j] * rhs[j];
            u.coeffs[space->dof(k, i)] = c;
        }
    }
    return u;
}

/// sqrt(c^T M c)
inline double l2_norm(const DgField& field, const SparseMatrix& mass)
{
    if (mass.rows() != static_cast<int>(field.coeffs.size()))
        throw std::invalid_argument("l2_norm: mass matrix does not match the field");
    const Vector mc = mass * field.coeffs;
    return std::sqrt(std::max(0.0, dot(field.coeffs, mc)));
}

inline double max_abs(const DgField& field)
{
    double m = 0.0;
    for (double c : field.coeffs) m = std::max(m, std::abs(c));
    return m;
}

// ---------------------------------------------------------------------------
// serialization

/// CSV: a `# dg_field elements=N degree=1` header, then one row per element.
inline void write_field_csv(std::ostream& os, const DgField& field)
{
    const int ne = field.space->num_elements();
    os << "# dg_field elements=" << ne << " degree=" << DgSpace::degree << '\n';
    os << "element,c0,c1,c2\n";
    const auto prec = os.precision(17);
    for (int k = 0; k < ne; ++k) os << k << ',' << field(k, 0) << ',' << field(k, 1) << ',' << field(k, 2) << '\n';
    os.precision(prec);
}

inline DgField read_field_csv(std::istream& is, const std::shared_ptr<const DgSpace>& space)
{
    std::string line;
    int ne = -1, deg = -1;
    if (!std::getline(is, line) || std::sscanf(line.c_str(), "# dg_field elements=%d degree=%d", &ne, &deg) != 2)
        throw std::runtime_error("read_field_csv: missing header");
    if (ne != space->num_elements() || deg != DgSpace::degree)
        throw std::runtime_error("read_field_csv: header does not match the space");
    std::getline(is, line);
    DgField u(space);
    for (int k = 0; k < ne; ++k) {
        if (!std::getline(is, line)) throw std::runtime_error("read_field_csv: truncated file");
        std::istringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        for (int j = 0; j < 3; ++j) {
            std::getline(row, cell, ',');
            u.coeffs[space->dof(k, j)] = std::stod(cell);
        }
    }
    return u;
}

/// Binary: magic "DGF1", int32 element count, int32 degree, then raw doubles.
inline void write_field_binary(std::ostream& os, const DgField& field)
{
    const std::int32_t ne = field.space->num_elements();
    const std::int32_t deg = DgSpace::degree;
    os.write("DGF1", 4);
    os.write(reinterpret_cast<const char*>(&ne), sizeof ne);
    os.write(reinterpret_cast<const char*>(&deg), sizeof deg);
    os.write(reinterpret_cast<const char*>(field.coeffs.data()),
             static_cast<std::streamsize>(field.coeffs.size() * sizeof(double)));
}

inline DgField read_field_binary(std::istream& is, const std::shared_ptr<const DgSpace>& space)
{
    char magic[4];
    std::int32_t ne = 0, deg = 0;
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(&ne), sizeof ne);
    is.read(reinterpret_cast<char*>(&deg), sizeof deg);
    if (!is || std::string(magic, 4) != "DGF1") throw std::runtime_error("read_field_binary: bad header");
    if (ne != space->num_elements() || deg != DgSpace::degree)
        throw std::runtime_error("read_field_binary: header does not match the space");
    DgField u(space);
    is.read(reinterpret_cast<char*>(u.coeffs.data()), static_cast<std::streamsize>(u.coeffs.size() * sizeof(double)));
    if (!is) throw std::runtime_error("read_field_binary: truncated file");
    return u;
}

/// Legacy ASCII VTK with one point per element node, so discontinuities survive.
inline void write_field_vtk(std::ostream& os, const std::vector<std::pair<std::string, const DgField*>>& fields)
{
    if (fields.empty()) throw std::invalid_argument("write_field_vtk: no fields");
    const DgSpace& space = *fields.front().second->space;
    const Mesh& mesh = space.mesh();
    const int ne = mesh.num_elements();
    os << "# vtk DataFile Version 3.0\ndg field\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    const auto prec = os.precision(17);
    os << "POINTS " << 3 * ne << " double\n";
    for (int k = 0; k < ne; ++k)
        for (int v : mesh.triangles[k]) os << mesh.vertices[v][0] << ' ' << mesh.vertices[v][1] << " 0\n";
    os << "CELLS " << ne << ' ' << 4 * ne << '\n';
    for (int k = 0; k < ne; ++k) os << "3 " << 3 * k << ' ' << 3 * k + 1 << ' ' << 3 * k + 2 << '\n';
    os << "CELL_TYPES " << ne << '\n';
    for (int k = 0; k < ne; ++k) os << "5\n";
    os << "POINT_DATA " << 3 * ne << '\n';
    for (const auto& [name, f] : fields) {
        if (f->space.get() != &space) throw std::invalid_argument("write_field_vtk: fields on different spaces");
        os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
        for (double c : f->coeffs) os << c << '\n';
    }
    os.precision(prec);
}

} // namespace fhn
