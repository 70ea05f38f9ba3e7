#pragma once

#include "fhn/dg_space.hpp"
#include "fhn/quadrature.hpp"
#include "fhn/sparse.hpp"
#include "fhn/velocity.hpp"

#include <array>
#include <functional>
#include <stdexcept>
#include <vector>

namespace fhn {

/// Cubic FitzHugh-Nagumo reaction g(y) = c1 y (y - c2)(y - 1) and the
/// linear activator/inhibitor couplings.
struct ReactionParams {
    double c1 = 9.0;
    double c2 = 0.02;
    double c3 = 5.0;
    double epsilon = 0.1;

    void validate() const
    {
        if (c1 < 0.0) throw std::invalid_argument("ReactionParams: c1 must be non-negative");
    }

    [[nodiscard]] double g(double y) const { return c1 * y * (y - c2) * (y - 1.0); }
    [[nodiscard]] double dg(double y) const { return c1 * (3.0 * y * y - 2.0 * (1.0 + c2) * y + c2); }

    [[nodiscard]] bool monostable() const { return c1 > 0.0 && c1 < 20.0 && c2 == 0.02; }
};

struct SipgConfig {
    double sigma_interior = 6.0;
    double sigma_boundary = 12.0;
    double diffusion = 1.0;
    VelocityField velocity{};

    void validate() const
    {
        if (!(sigma_interior > 0.0) || !(sigma_boundary > 0.0))
            throw std::invalid_argument("SipgConfig: penalties must be positive");
        if (!(diffusion > 0.0)) throw std::invalid_argument("SipgConfig: diffusion must be positive");
    }
};

/// Boundary data i_D(x) used on Dirichlet edges and on the inflow boundary.
using BoundaryFunction = std::function<double(const Point&)>;

namespace detail {

inline void add_block(std::vector<Triplet>& t, const DgSpace& space, int kr, int kc, const double (&blk)[3][3])
{
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) t.push_back({space.dof(kr, i), space.dof(kc, j), blk[i][j]});
}

inline void require_classified(const Mesh& mesh)
{
    for (const Edge& e : mesh.edges)
        if (e.is_boundary() == (e.cls == EdgeClass::Interior))
            throw std::invalid_argument("edge classification inconsistent with connectivity; run classify_edges");
}

} // namespace detail

/// Block-diagonal mass matrix, local block area/12 * [[2,1,1],[1,2,1],[1,1,2]].
inline SparseMatrix assemble_mass(const DgSpace& space)
{
    std::vector<Triplet> t;
    t.reserve(9 * static_cast<std::size_t>(space.num_elements()));
    for (int k = 0; k < space.num_elements(); ++k) {
        const double s = space.jacobian_det(k) / 24.0;
        double blk[3][3];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) blk[i][j] = (i == j ? 2.0 : 1.0) * s;
        detail::add_block(t, space, k, k, blk);
    }
    return SparseMatrix::from_triplets(space.dim(), space.dim(), std::move(t));
}

/// SIPG diffusion with upwind convection. Row = test function, column = trial.
///
/// a(v,w) = sum_K (d grad v, grad w)_K + (V.grad v, w)_K
///        - sum_{E in interior+Dirichlet} ({d grad v}.[w] + {d grad w}.[v]) - sigma d / h_E ([v],[w])
///        + sum_K (V.n (v^e - v), w)_{dK^- \ dOmega} - (V.n v, w)_{dK^- on Gamma^-}
///
/// Inflow/outflow is decided pointwise at the edge quadrature points.
inline SparseMatrix assemble_sipg_operator(const DgSpace& space, const SipgConfig& cfg)
{
    cfg.validate();
    const Mesh& mesh = space.mesh();
    detail::require_classified(mesh);
    const double d = cfg.diffusion;
    const auto& vel = cfg.velocity;
    std::vector<Triplet> t;
    t.reserve(9 * static_cast<std::size_t>(space.num_elements()) + 36 * static_cast<std::size_t>(mesh.num_edges()));

    const auto& tri = triangle_rule();
    for (int k = 0; k < space.num_elements(); ++k) {
        double blk[3][3] = {};
        for (std::size_t q = 0; q < tri.size(); ++q) {
            const auto phi = DgSpace::basis(tri.points[q]);
            const Point v = vel(space.to_physical(k, tri.points[q]));
            const double w = tri.weights[q] * space.jacobian_det(k);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    blk[i][j] += w * (d * dot(space.grad(k, j), space.grad(k, i)) + dot(v, space.grad(k, j)) * phi[i]);
        }
        detail::add_block(t, space, k, k, blk);
    }

    const auto& er = edge_rule();
    for (const Edge& e : mesh.edges) {
        const Point& a = mesh.vertices[e.vertices[0]];
        const Point& b = mesh.vertices[e.vertices[1]];
        const bool interior = !e.is_boundary();
        const bool dirichlet = e.cls == EdgeClass::DirichletBoundary;
        const int nsides = interior ? 2 : 1;
        const int elem[2] = {e.left, e.right};
        const double sign[2] = {1.0, -1.0};
        const double avg = interior ? 0.5 : 1.0;
        const double penalty = (interior ? cfg.sigma_interior : cfg.sigma_boundary) * d / e.length;
        double gn[2][3] = {};
        for (int s = 0; s < nsides; ++s)
            for (int j = 0; j < 3; ++j) gn[s][j] = dot(space.grad(elem[s], j), e.normal);

        double blk[2][2][3][3] = {}; // [test side][trial side][i][j]
        for (std::size_t q = 0; q < er.size(); ++q) {
            const double sq = er.points[q][0];
            const Point x{a[0] + sq * (b[0] - a[0]), a[1] + sq * (b[1] - a[1])};
            const double w = er.weights[q] * e.length;
            std::array<double, 3> phi[2];
            for (int s = 0; s < nsides; ++s) phi[s] = DgSpace::basis(space.to_reference(elem[s], x));
            const double vn = dot(vel(x), e.normal);

            if (interior || dirichlet) {
                for (int st = 0; st < nsides; ++st)
                    for (int ss = 0; ss < nsides; ++ss)
                        for (int i = 0; i < 3; ++i)
                            for (int j = 0; j < 3; ++j)
                                blk[st][ss][i][j] +=
                                    w * (-avg * d * gn[ss][j] * sign[st] * phi[st][i] -
                                         avg * d * gn[st][i] * sign[ss] * phi[ss][j] +
                                         penalty * sign[ss] * sign[st] * phi[ss][j] * phi[st][i]);
            }
            if (interior) {
                if (vn < 0.0) {
                    // inflow face of the left element: V.n_L (v_R - v_L) w_L
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            blk[0][1][i][j] += w * vn * phi[1][j] * phi[0][i];
                            blk[0][0][i][j] -= w * vn * phi[0][j] * phi[0][i];
                        }
                } else if (vn > 0.0) {
                    // inflow face of the right element, V.n_R = -vn
                    for (int i = 0; i < 3; ++i)
                        for (int j = 0; j < 3; ++j) {
                            blk[1][0][i][j] -= w * vn * phi[0][j] * phi[1][i];
                            blk[1][1][i][j] += w * vn * phi[1][j] * phi[1][i];
                        }
                }
            } else if (vn < 0.0) {
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) blk[0][0][i][j] -= w * vn * phi[0][j] * phi[0][i];
            }
        }
        for (int st = 0; st < nsides; ++st)
            for (int ss = 0; ss < nsides; ++ss) detail::add_block(t, space, elem[st], elem[ss], blk[st][ss]);
    }
    return SparseMatrix::from_triplets(space.dim(), space.dim(), std::move(t));
}

/// Load vector for Dirichlet edges (penalty and consistency terms) and for the
/// inflow boundary: sum_E (i_D, sigma d/h_E w - d grad w.n)_E - (V.n i_D, w)_{Gamma^-}.
inline Vector assemble_boundary_load(const DgSpace& space, const SipgConfig& cfg, const BoundaryFunction& data)
{
    cfg.validate();
    const Mesh& mesh = space.mesh();
    detail::require_classified(mesh);
    Vector load(space.dim(), 0.0);
    if (!data) return load;
    const double d = cfg.diffusion;
    const auto& er = edge_rule();
    for (const Edge& e : mesh.edges) {
        if (!e.is_boundary()) continue;
        const Point& a = mesh.vertices[e.vertices[0]];
        const Point& b = mesh.vertices[e.vertices[1]];
        const int k = e.left;
        const bool dirichlet = e.cls == EdgeClass::DirichletBoundary;
        const double penalty = cfg.sigma_boundary * d / e.length;
        for (std::size_t q = 0; q < er.size(); ++q) {
            const double sq = er.points[q][0];
            const Point x{a[0] + sq * (b[0] - a[0]), a[1] + sq * (b[1] - a[1])};
            const double vn = dot(cfg.velocity(x), e.normal);
            if (!dirichlet && !(vn < 0.0)) continue;
            const double w = er.weights[q] * e.length;
            const double g = data(x);
            const auto phi = DgSpace::basis(space.to_reference(k, x));
            for (int i = 0; i < 3; ++i) {
                double contrib = 0.0;
                if (dirichlet) contrib += g * (penalty * phi[i] - d * dot(space.grad(k, i), e.normal));
                if (vn < 0.0) contrib -= vn * g * phi[i];
                load[space.dof(k, i)] += w * contrib;
            }
        }
    }
    return load;
}

/// Mass-scaled coupling matrices of the activator/inhibitor system.
struct Couplings {
    SparseMatrix inhibitor_in_activator; ///< C_z = M
    SparseMatrix activator_in_inhibitor; ///< C_y = -eps c3 M
    SparseMatrix inhibitor_reaction;     ///< B_z = eps M
};

inline Couplings assemble_couplings(const SparseMatrix& mass, const ReactionParams& params)
{
    Couplings c{mass, mass, mass};
    c.activator_in_inhibitor *= -params.epsilon * params.c3;
    c.inhibitor_reaction *= params.epsilon;
    return c;
}

inline Couplings assemble_couplings(const DgSpace& space, const ReactionParams& params)
{
    return assemble_couplings(assemble_mass(space), params);
}

/// Per-element values of sum_q w g(y_q) phi_i (vector) and sum_q w g'(y_q) phi_i phi_j (blocks).
inline Vector nonlinear_vector(const DgField& y, const ReactionParams& params)
{
    const DgSpace& space = *y.space;
    const auto& tri = triangle_rule();
    Vector out(space.dim(), 0.0);
    for (int k = 0; k < space.num_elements(); ++k) {
        for (std::size_t q = 0; q < tri.size(); ++q) {
            const auto phi = DgSpace::basis(tri.points[q]);
            const double yq = y(k, 0) * phi[0] + y(k, 1) * phi[1] + y(k, 2) * phi[2];
            const double w = tri.weights[q] * space.jacobian_det(k) * params.g(yq);
            for (int i = 0; i < 3; ++i) out[space.dof(k, i)] += w * phi[i];
        }
    }
    return out;
}

using ElementBlock = std::array<double, 9>;

inline std::vector<ElementBlock> nonlinear_jacobian_blocks(const DgField& y, const ReactionParams& params)
{
    const DgSpace& space = *y.space;
    const auto& tri = triangle_rule();
    std::vector<ElementBlock> blocks(space.num_elements());
    for (int k = 0; k < space.num_elements(); ++k) {
        ElementBlock blk{};
        for (std::size_t q = 0; q < tri.size(); ++q) {
            const auto phi = DgSpace::basis(tri.points[q]);
            const double yq = y(k, 0) * phi[0] + y(k, 1) * phi[1] + y(k, 2) * phi[2];
            const double w = tri.weights[q] * space.jacobian_det(k) * params.dg(yq);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) blk[3 * i + j] += w * phi[i] * phi[j];
        }
        blocks[k] = blk;
    }
    return blocks;
}

inline SparseMatrix nonlinear_jacobian(const DgField& y, const ReactionParams& params)
{
    const DgSpace& space = *y.space;
    const auto blocks = nonlinear_jacobian_blocks(y, params);
    std::vector<Triplet> t;
    t.reserve(9 * blocks.size());
    for (int k = 0; k < space.num_elements(); ++k)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) t.push_back({space.dof(k, i), space.dof(k, j), blocks[k][3 * i + j]});
    return SparseMatrix::from_triplets(space.dim(), space.dim(), std::move(t));
}

/// Matrices of the semi-discrete adjoint system. The diffusion-convection
/// operators use the reversed velocity; the couplings are the transposed
/// roles of the state couplings.
struct AdjointOperators {
    SparseMatrix a_p;
    SparseMatrix a_q;
    SparseMatrix c_q; ///< -eps c3 M (q in the p equation)
    SparseMatrix b_q; ///< eps M
    SparseMatrix c_p; ///< M (p in the q equation)
};

inline AdjointOperators assemble_adjoint_operators(const DgSpace& space, const SipgConfig& cfg_p,
                                                   const SipgConfig& cfg_q, const ReactionParams& params)
{
    SipgConfig rp = cfg_p;
    SipgConfig rq = cfg_q;
    rp.velocity = cfg_p.velocity.reversed();
    rq.velocity = cfg_q.velocity.reversed();
    const SparseMatrix mass = assemble_mass(space);
    AdjointOperators ops{assemble_sipg_operator(space, rp), assemble_sipg_operator(space, rq), mass, mass, mass};
    ops.c_q *= -params.epsilon * params.c3;
    ops.b_q *= params.epsilon;
    return ops;
}

/// B_p(y): the g'(y)-weighted mass matrix.
inline SparseMatrix adjoint_reaction(const DgField& y, const ReactionParams& params)
{
    return nonlinear_jacobian(y, params);
}

/// Tracking load -omega * M target.
inline Vector adjoint_load(const SparseMatrix& mass, const DgField& target, double weight)
{
    Vector l = mass * target.coeffs;
    for (double& v : l) v *= -weight;
    return l;
}

} // namespace fhn
