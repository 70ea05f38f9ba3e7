#pragma once

#include "fhn/assembly.hpp"
#include "fhn/linear_solver.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fhn {

struct TimeGrid {
    double final_time = 1.0;
    int steps = 20;

    void validate() const
    {
        if (!(final_time > 0.0)) throw std::invalid_argument("TimeGrid: final time must be positive");
        if (steps < 1) throw std::invalid_argument("TimeGrid: need at least one step");
    }
    [[nodiscard]] double tau() const { return final_time / steps; }
    /// t_n; the last node is T exactly.
    [[nodiscard]] double time(int n) const { return n == steps ? final_time : n * tau(); }
};

/// Node values (y_n, z_n) or (p_n, q_n) for n = 0..N.
struct Trajectory {
    TimeGrid grid;
    std::shared_ptr<const DgSpace> space;
    std::vector<Vector> first;
    std::vector<Vector> second;

    [[nodiscard]] int nodes() const { return static_cast<int>(first.size()); }
    [[nodiscard]] DgField first_field(int n) const { return DgField(space, first.at(n)); }
    [[nodiscard]] DgField second_field(int n) const { return DgField(space, second.at(n)); }
};

/// Control values u_1..u_N, stored at index n-1 (right endpoint of each step).
using Control = std::vector<Vector>;

inline Control zero_control(const DgSpace& space, const TimeGrid& grid)
{
    return Control(grid.steps, Vector(space.dim(), 0.0));
}

struct NewtonConfig {
    double absolute_tolerance = 1e-10;
    double relative_tolerance = 0.0;
    int max_iterations = 25;
    bool damping = false;

    void validate() const
    {
        if (!(absolute_tolerance > 0.0) || relative_tolerance < 0.0)
            throw std::invalid_argument("NewtonConfig: tolerances must be positive");
        if (max_iterations < 1) throw std::invalid_argument("NewtonConfig: max_iterations must be >= 1");
    }
};

class NewtonError : public std::runtime_error {
public:
    NewtonError(int step, double residual, const std::string& what)
        : std::runtime_error("Newton failed at time step " + std::to_string(step) + " (residual " +
                             std::to_string(residual) + "): " + what),
          step_(step), residual_(residual)
    {
    }
    [[nodiscard]] int step() const { return step_; }
    [[nodiscard]] double residual() const { return residual_; }

private:
    int step_;
    double residual_;
};

struct NewtonReport {
    int iterations = 0;
    std::vector<double> residuals; ///< stacked residual norm before each update and after the last
};

struct SolveStats {
    long newton_iterations = 0;
    long linear_solves = 0;
};

/// Problem description: discretization, physics and boundary data.
struct FhnProblem {
    std::shared_ptr<const DgSpace> space;
    ReactionParams reaction{};
    SipgConfig sipg_y{};
    SipgConfig sipg_z{};
    BoundaryFunction data_y{}; ///< Dirichlet/inflow data of the activator (zero if empty)
    BoundaryFunction data_z{};
    TimeGrid grid{};
    NewtonConfig newton{};
    LinearSolverOptions linear{SolverMethod::Iterative, 1e-11, 500};
};

/// Objective weights shared by the adjoint and the optimizer.
struct ObjectiveWeights {
    double tracking_y = 0.0; ///< omega_Q^y
    double tracking_z = 0.0;
    double terminal_y = 0.0; ///< omega_T^y
    double terminal_z = 0.0;
    double tikhonov = 0.0; ///< omega_u
    double sparsity = 0.0; ///< mu

    void validate() const
    {
        for (double w : {tracking_y, tracking_z, terminal_y, terminal_z, tikhonov, sparsity})
            if (!(w >= 0.0)) throw std::invalid_argument("ObjectiveWeights: weights must be non-negative");
    }
};

/// Desired states. Empty vectors mean zero; tracking targets are indexed like controls (n-1).
struct Targets {
    std::vector<Vector> tracking_y;
    std::vector<Vector> tracking_z;
    Vector terminal_y;
    Vector terminal_z;
};

/// Assembled operators of one state problem plus the cached factorizations
/// of the constant parts of the Newton and adjoint matrices.
class FhnModel {
public:
    explicit FhnModel(FhnProblem problem) : p_(std::move(problem))
    {
        if (!p_.space) throw std::invalid_argument("FhnModel: null space");
        p_.reaction.validate();
        p_.grid.validate();
        p_.newton.validate();
        const DgSpace& space = *p_.space;
        n_ = space.dim();
        mass_ = assemble_mass(space);
        a_y_ = assemble_sipg_operator(space, p_.sipg_y);
        a_z_ = assemble_sipg_operator(space, p_.sipg_z);
        l_y_ = assemble_boundary_load(space, p_.sipg_y, p_.data_y);
        l_z_ = assemble_boundary_load(space, p_.sipg_z, p_.data_z);
        const Couplings c = assemble_couplings(mass_, p_.reaction);
        const double inv_tau = 1.0 / p_.grid.tau();

        // K0 = [[M/tau + A_y, M], [-eps c3 M, M/tau + A_z + eps M]]
        const SparseMatrix yy = add_scaled(mass_, a_y_, inv_tau, 1.0);
        const SparseMatrix zz = add_scaled(add_scaled(mass_, a_z_, inv_tau, 1.0), c.inhibitor_reaction, 1.0, 1.0);
        state_matrix_ = block2x2(yy, c.inhibitor_in_activator, c.activator_in_inhibitor, zz);
        // the adjoint matrix is its transpose: A(-V) = A(V)^T and the couplings swap
        const AdjointOperators adj = assemble_adjoint_operators(space, p_.sipg_y, p_.sipg_z, p_.reaction);
        const SparseMatrix pp = add_scaled(mass_, adj.a_p, inv_tau, 1.0);
        const SparseMatrix qq = add_scaled(add_scaled(mass_, adj.a_q, inv_tau, 1.0), adj.b_q, 1.0, 1.0);
        adjoint_matrix_ = block2x2(pp, adj.c_q, adj.c_p, qq);

        state_lu_ = std::make_shared<const Factorization>(state_matrix_);
        adjoint_lu_ = std::make_shared<const Factorization>(adjoint_matrix_);
        state_pos_ = block_positions(state_matrix_);
        adjoint_pos_ = block_positions(adjoint_matrix_);
    }

    [[nodiscard]] const FhnProblem& problem() const { return p_; }
    [[nodiscard]] const std::shared_ptr<const DgSpace>& space() const { return p_.space; }
    [[nodiscard]] const TimeGrid& grid() const { return p_.grid; }
    [[nodiscard]] const SparseMatrix& mass() const { return mass_; }
    [[nodiscard]] const SparseMatrix& state_matrix() const { return state_matrix_; }
    [[nodiscard]] const SparseMatrix& adjoint_matrix() const { return adjoint_matrix_; }
    [[nodiscard]] int dim() const { return n_; }

    /// Stacked residual of one backward-Euler step.
    [[nodiscard]] Vector step_residual(std::span<const double> yz, std::span<const double> y_prev,
                                       std::span<const double> z_prev, std::span<const double> u) const
    {
        Vector r = state_matrix_ * yz;
        const Vector b = nonlinear_vector(DgField(p_.space, Vector(yz.begin(), yz.begin() + n_)), p_.reaction);
        const Vector rhs = step_rhs(y_prev, z_prev, u);
        for (int i = 0; i < n_; ++i) r[i] += b[i];
        for (int i = 0; i < 2 * n_; ++i) r[i] -= rhs[i];
        return r;
    }

    /// One implicit step: returns the stacked (y_n, z_n).
    [[nodiscard]] Vector newton_step(std::span<const double> y_prev, std::span<const double> z_prev,
                                     std::span<const double> u, int step = 0, NewtonReport* report = nullptr,
                                     SolveStats* stats = nullptr) const
    {
        const NewtonConfig& cfg = p_.newton;
        Vector x(2 * n_);
        std::copy(y_prev.begin(), y_prev.end(), x.begin());
        std::copy(z_prev.begin(), z_prev.end(), x.begin() + n_);
        Vector r = step_residual(x, y_prev, z_prev, u);
        double res = norm2(r);
        const double target = std::max(cfg.absolute_tolerance, cfg.relative_tolerance * res);
        NewtonReport rep;
        rep.residuals.push_back(res);
        SparseMatrix jac = state_matrix_;
        while (res > target) {
            if (rep.iterations >= cfg.max_iterations)
                throw NewtonError(step, res, "maximum number of iterations reached");
            if (!std::isfinite(res)) throw NewtonError(step, res, "residual is not finite");
            add_reaction_blocks(jac, state_matrix_, state_pos_, Vector(x.begin(), x.begin() + n_));
            for (double& v : r) v = -v;
            // inexact Newton with forcing term min(1e-3, |r|); an affine residual gets one tight solve
            LinearSolverOptions lin = p_.linear;
            if (p_.reaction.c1 != 0.0) lin.tolerance = std::max(lin.tolerance, std::min(1e-3, res));
            const Vector dx = solve_with_reference(jac, r, state_lu_, lin);
            if (stats) ++stats->linear_solves;
            double s = 1.0;
            Vector trial = x;
            axpy(s, dx, trial);
            Vector r_trial = step_residual(trial, y_prev, z_prev, u);
            double res_trial = norm2(r_trial);
            for (int halvings = 0; cfg.damping && !(res_trial < res); ++halvings) {
                if (halvings == 10) throw NewtonError(step, res, "damping could not reduce the residual");
                s *= 0.5;
                trial = x;
                axpy(s, dx, trial);
                r_trial = step_residual(trial, y_prev, z_prev, u);
                res_trial = norm2(r_trial);
            }
            x = std::move(trial);
            r = std::move(r_trial);
            res = res_trial;
            ++rep.iterations;
            rep.residuals.push_back(res);
        }
        if (stats) stats->newton_iterations += rep.iterations;
        if (report) *report = std::move(rep);
        return x;
    }

    /// Backward-Euler trajectory for the given control (empty control means u = 0).
    [[nodiscard]] Trajectory forward(const Control& control, const Vector& y0, const Vector& z0,
                                     SolveStats* stats = nullptr) const
    {
        const int steps = p_.grid.steps;
        if (!control.empty() && static_cast<int>(control.size()) != steps)
            throw std::invalid_argument("forward: control must have one value per time step");
        if (static_cast<int>(y0.size()) != n_ || static_cast<int>(z0.size()) != n_)
            throw std::invalid_argument("forward: initial data dimension mismatch");
        Trajectory t{p_.grid, p_.space, {y0}, {z0}};
        t.first.reserve(steps + 1);
        t.second.reserve(steps + 1);
        const Vector zero(n_, 0.0);
        for (int n = 1; n <= steps; ++n) {
            const Vector& u = control.empty() ? zero : control[n - 1];
            if (static_cast<int>(u.size()) != n_) throw std::invalid_argument("forward: control dimension mismatch");
            const Vector x = newton_step(t.first.back(), t.second.back(), u, n, nullptr, stats);
            t.first.emplace_back(x.begin(), x.begin() + n_);
            t.second.emplace_back(x.begin() + n_, x.end());
        }
        return t;
    }

    /// Backward sweep of the discrete adjoint. Node n-1 holds the multiplier of
    /// step n, so the gradient with respect to u_n pairs with node n-1; node N
    /// holds the terminal data omega_T (y_N - y_T).
    [[nodiscard]] Trajectory adjoint(const Trajectory& state, const Targets& targets, const ObjectiveWeights& w,
                                     SolveStats* stats = nullptr) const
    {
        const int steps = p_.grid.steps;
        if (state.nodes() != steps + 1) throw std::invalid_argument("adjoint: state trajectory has wrong length");
        Trajectory a{p_.grid, p_.space, std::vector<Vector>(steps + 1), std::vector<Vector>(steps + 1)};
        a.first[steps] = scaled_difference(state.first[steps], targets.terminal_y, w.terminal_y);
        a.second[steps] = scaled_difference(state.second[steps], targets.terminal_z, w.terminal_z);
        const double inv_tau = 1.0 / p_.grid.tau();
        SparseMatrix k = adjoint_matrix_;
        for (int n = steps; n >= 1; --n) {
            const Vector dy = scaled_difference(state.first[n], at(targets.tracking_y, n - 1), w.tracking_y);
            const Vector dz = scaled_difference(state.second[n], at(targets.tracking_z, n - 1), w.tracking_z);
            const Vector mp = mass_ * a.first[n];
            const Vector mq = mass_ * a.second[n];
            const Vector mdy = mass_ * dy;
            const Vector mdz = mass_ * dz;
            Vector rhs(2 * n_);
            bool zero = true;
            for (int i = 0; i < n_; ++i) {
                rhs[i] = inv_tau * mp[i] + mdy[i];
                rhs[n_ + i] = inv_tau * mq[i] + mdz[i];
                zero = zero && rhs[i] == 0.0 && rhs[n_ + i] == 0.0;
            }
            if (zero) {
                a.first[n - 1].assign(n_, 0.0);
                a.second[n - 1].assign(n_, 0.0);
                continue;
            }
            add_reaction_blocks(k, adjoint_matrix_, adjoint_pos_, state.first[n]);
            const Vector x = solve_with_reference(k, rhs, adjoint_lu_, p_.linear);
            if (stats) ++stats->linear_solves;
            a.first[n - 1].assign(x.begin(), x.begin() + n_);
            a.second[n - 1].assign(x.begin() + n_, x.end());
        }
        return a;
    }

private:
    static const Vector& at(const std::vector<Vector>& v, int i)
    {
        static const Vector empty;
        return v.empty() ? empty : v.at(i);
    }

    /// weight * (x - target), target empty meaning zero
    [[nodiscard]] Vector scaled_difference(const Vector& x, const Vector& target, double weight) const
    {
        Vector d(n_, 0.0);
        if (weight == 0.0) return d;
        if (!target.empty() && static_cast<int>(target.size()) != n_)
            throw std::invalid_argument("target dimension mismatch");
        for (int i = 0; i < n_; ++i) d[i] = weight * (x[i] - (target.empty() ? 0.0 : target[i]));
        return d;
    }

    [[nodiscard]] Vector step_rhs(std::span<const double> y_prev, std::span<const double> z_prev,
                                  std::span<const double> u) const
    {
        const double inv_tau = 1.0 / p_.grid.tau();
        const Vector my = mass_ * y_prev;
        const Vector mz = mass_ * z_prev;
        const Vector mu = mass_ * u;
        Vector rhs(2 * n_);
        for (int i = 0; i < n_; ++i) {
            rhs[i] = inv_tau * my[i] + l_y_[i] + mu[i];
            rhs[n_ + i] = inv_tau * mz[i] + l_z_[i];
        }
        return rhs;
    }

    /// Value positions of the element diagonal blocks of the upper-left field block.
    [[nodiscard]] std::vector<std::array<std::ptrdiff_t, 9>> block_positions(const SparseMatrix& k) const
    {
        const DgSpace& space = *p_.space;
        std::vector<std::array<std::ptrdiff_t, 9>> pos(space.num_elements());
        for (int e = 0; e < space.num_elements(); ++e)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    pos[e][3 * i + j] = k.find(space.dof(e, i), space.dof(e, j));
                    if (pos[e][3 * i + j] < 0) throw std::logic_error("missing element block in the step matrix");
                }
        return pos;
    }

    /// out = base + blocks of the g'(y)-weighted mass in the upper-left block.
    void add_reaction_blocks(SparseMatrix& out, const SparseMatrix& base,
                             const std::vector<std::array<std::ptrdiff_t, 9>>& pos, Vector y) const
    {
        std::copy(base.values().begin(), base.values().end(), out.values().begin());
        const auto blocks = nonlinear_jacobian_blocks(DgField(p_.space, std::move(y)), p_.reaction);
        auto vals = out.values();
        for (std::size_t e = 0; e < blocks.size(); ++e)
            for (int m = 0; m < 9; ++m) vals[pos[e][m]] += blocks[e][m];
    }

    FhnProblem p_;
    int n_ = 0;
    SparseMatrix mass_, a_y_, a_z_;
    Vector l_y_, l_z_;
    SparseMatrix state_matrix_, adjoint_matrix_;
    std::shared_ptr<const Factorization> state_lu_, adjoint_lu_;
    std::vector<std::array<std::ptrdiff_t, 9>> state_pos_, adjoint_pos_;
};

inline Trajectory forward_solve(const FhnModel& model, const Control& control, const Vector& y0, const Vector& z0,
                                SolveStats* stats = nullptr)
{
    return model.forward(control, y0, z0, stats);
}

inline Trajectory adjoint_solve(const FhnModel& model, const Trajectory& state, const Targets& targets,
                                const ObjectiveWeights& weights, SolveStats* stats = nullptr)
{
    return model.adjoint(state, targets, weights, stats);
}

/// Tracking targets from an uncontrolled run: y_Q(t_n) = y_nat(t_n) while
/// n <= last_step and zero afterwards.
inline Targets tracking_targets(const Trajectory& natural, int last_step)
{
    Targets t;
    const int steps = natural.grid.steps;
    const Vector zero(natural.first.front().size(), 0.0);
    for (int n = 1; n <= steps; ++n) {
        t.tracking_y.push_back(n <= last_step ? natural.first[n] : zero);
        t.tracking_z.push_back(n <= last_step ? natural.second[n] : zero);
    }
    return t;
}

/// Terminal targets y_T = y_nat(t_node), z_T = z_nat(t_node).
inline Targets terminal_targets(const Trajectory& natural, int node)
{
    if (node < 0 || node >= natural.nodes()) throw std::out_of_range("terminal_targets: node out of range");
    Targets t;
    t.terminal_y = natural.first[node];
    t.terminal_z = natural.second[node];
    return t;
}

} // namespace fhn
