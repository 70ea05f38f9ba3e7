#pragma once

#include "fhn/fhn_solver.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace fhn {

struct ControlBounds {
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();

    void validate() const
    {
        if (std::isnan(lower) || std::isnan(upper) || lower > upper)
            throw std::invalid_argument("ControlBounds: need lower <= upper");
    }
    [[nodiscard]] double clamp(double v) const { return std::min(upper, std::max(lower, v)); }
};

enum class BetaVariant { FletcherReeves, PolakRibiere, HestenesStiefel, HagerZhang };
enum class LineSearchStrategy { Armijo, Bisection };
enum class GradientNorm { L2Q, Euclidean };

inline BetaVariant parse_beta_variant(const std::string& name)
{
    if (name == "fletcher-reeves" || name == "fr") return BetaVariant::FletcherReeves;
    if (name == "polak-ribiere" || name == "pr") return BetaVariant::PolakRibiere;
    if (name == "hestenes-stiefel" || name == "hs") return BetaVariant::HestenesStiefel;
    if (name == "hager-zhang" || name == "hz") return BetaVariant::HagerZhang;
    throw std::invalid_argument("unknown beta variant '" + name + "'");
}

inline std::string to_string(BetaVariant b)
{
    switch (b) {
    case BetaVariant::FletcherReeves: return "fletcher-reeves";
    case BetaVariant::PolakRibiere: return "polak-ribiere";
    case BetaVariant::HestenesStiefel: return "hestenes-stiefel";
    case BetaVariant::HagerZhang: return "hager-zhang";
    }
    return "?";
}

inline LineSearchStrategy parse_line_search(const std::string& name)
{
    if (name == "armijo") return LineSearchStrategy::Armijo;
    if (name == "bisection") return LineSearchStrategy::Bisection;
    throw std::invalid_argument("unknown line search '" + name + "'");
}

inline std::string to_string(LineSearchStrategy s) { return s == LineSearchStrategy::Armijo ? "armijo" : "bisection"; }

inline GradientNorm parse_gradient_norm(const std::string& name)
{
    if (name == "l2q") return GradientNorm::L2Q;
    if (name == "euclidean") return GradientNorm::Euclidean;
    throw std::invalid_argument("unknown gradient norm '" + name + "'");
}

inline std::string to_string(GradientNorm n) { return n == GradientNorm::L2Q ? "l2q" : "euclidean"; }

struct OptimizerConfig {
    BetaVariant beta = BetaVariant::HagerZhang;
    LineSearchStrategy line_search = LineSearchStrategy::Armijo;
    double armijo = 1e-4;
    double wolfe = 0.9;           ///< curvature constant of the bisection search
    double gradient_tolerance = 1e-3;  ///< Tol_1 on the norm of g
    GradientNorm gradient_norm = GradientNorm::L2Q;
    double objective_tolerance = 1e-5; ///< Tol_2 on |J_{k+1} - J_k|
    int max_iterations = 2000;
    int restart_every = 50;
    double min_step = 1e-14;
    int max_trials = 60;
    double initial_step = 0.0; ///< 0 selects a scale-aware first step
    bool snap_sparsity = true;  ///< zero u where |p| <= mu after the loop and continue
    double snap_tolerance = 1e-3; ///< largest relative increase of J a snap may cost

    void validate() const
    {
        if (!(armijo > 0.0 && armijo < 0.5)) throw std::invalid_argument("OptimizerConfig: armijo must lie in (0, 1/2)");
        if (!(wolfe > armijo && wolfe < 1.0)) throw std::invalid_argument("OptimizerConfig: wolfe must lie in (armijo, 1)");
        if (!(gradient_tolerance >= 0.0) || !(objective_tolerance >= 0.0))
            throw std::invalid_argument("OptimizerConfig: tolerances must be non-negative");
        if (max_iterations < 0 || restart_every < 1 || max_trials < 1)
            throw std::invalid_argument("OptimizerConfig: iteration limits must be positive");
        if (initial_step < 0.0) throw std::invalid_argument("OptimizerConfig: initial step must be non-negative");
        if (!(snap_tolerance >= 0.0)) throw std::invalid_argument("OptimizerConfig: snap tolerance must be non-negative");
    }
};

// ---------------------------------------------------------------------------
// pointwise formulas

inline Control map_control(const Control& a, const std::function<double(double)>& f)
{
    Control out = a;
    for (auto& v : out)
        for (double& x : v) x = f(x);
    return out;
}

/// lambda = clamp(-p / mu, -1, 1) coefficientwise.
inline Control subgradient_lambda(const Control& p, double mu)
{
    if (!(mu > 0.0)) throw std::invalid_argument("subgradient_lambda: mu must be positive");
    return map_control(p, [mu](double v) { return std::clamp(-v / mu, -1.0, 1.0); });
}

/// g = omega_u u + p + mu lambda; lambda may be empty when mu = 0.
inline Control composite_gradient(const Control& u, const Control& p, const Control& lambda,
                                  const ObjectiveWeights& w)
{
    if (u.size() != p.size() || (!lambda.empty() && lambda.size() != u.size()))
        throw std::invalid_argument("composite_gradient: time dimension mismatch");
    Control g = p;
    for (std::size_t n = 0; n < g.size(); ++n)
        for (std::size_t i = 0; i < g[n].size(); ++i) {
            g[n][i] += w.tikhonov * u[n][i];
            if (!lambda.empty()) g[n][i] += w.sparsity * lambda[n][i];
        }
    return g;
}

inline Control project_control(const Control& v, const ControlBounds& b)
{
    return map_control(v, [&b](double x) { return b.clamp(x); });
}

/// u = clamp(-(p + mu lambda) / omega_u, u_a, u_b).
inline Control projection_formula(const Control& p, const Control& lambda, const ObjectiveWeights& w,
                                  const ControlBounds& b)
{
    if (!(w.tikhonov > 0.0)) throw std::invalid_argument("projection_formula: omega_u must be positive");
    Control u = p;
    for (std::size_t n = 0; n < u.size(); ++n)
        for (std::size_t i = 0; i < u[n].size(); ++i) {
            const double s = p[n][i] + (lambda.empty() ? 0.0 : w.sparsity * lambda[n][i]);
            u[n][i] = b.clamp(-s / w.tikhonov);
        }
    return u;
}

// ---------------------------------------------------------------------------
// space-time inner products

/// <a, b>_{L2(Q)} = sum_n tau a_n^T M b_n
inline double inner_q(const SparseMatrix& mass, double tau, const Control& a, const Control& b)
{
    if (a.size() != b.size()) throw std::invalid_argument("inner_q: time dimension mismatch");
    double s = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) s += tau * dot(a[n], mass * b[n]);
    return s;
}

inline double norm_q(const SparseMatrix& mass, double tau, const Control& a)
{
    return std::sqrt(std::max(0.0, inner_q(mass, tau, a, a)));
}

/// integral of |u| over the domain by degree-4 quadrature per element
inline double l1_integral(const DgSpace& space, const Vector& u)
{
    const auto& rule = triangle_rule();
    double s = 0.0;
    for (int k = 0; k < space.num_elements(); ++k)
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const auto phi = DgSpace::basis(rule.points[q]);
            const double v = u[space.dof(k, 0)] * phi[0] + u[space.dof(k, 1)] * phi[1] + u[space.dof(k, 2)] * phi[2];
            s += rule.weights[q] * space.jacobian_det(k) * std::abs(v);
        }
    return s;
}

// ---------------------------------------------------------------------------
// objective

struct ObjectiveValue {
    double smooth = 0.0; ///< I(u)
    double l1 = 0.0;     ///< j(u)
    double total = 0.0;  ///< J = I + mu j
    [[nodiscard]] double sparse_part(const ObjectiveWeights& w) const { return w.sparsity * l1; }
};

/// Right-endpoint rule in time, mass-matrix norms in space.
inline ObjectiveValue evaluate_objective(const FhnModel& model, const Trajectory& state, const Control& u,
                                         const Targets& targets, const ObjectiveWeights& w)
{
    const int steps = model.grid().steps;
    if (state.nodes() != steps + 1 || static_cast<int>(u.size()) != steps)
        throw std::invalid_argument("evaluate_objective: time dimension mismatch");
    const SparseMatrix& m = model.mass();
    const double tau = model.grid().tau();
    auto sq_dist = [&m](const Vector& x, const Vector& target) {
        if (!target.empty() && target.size() != x.size())
            throw std::invalid_argument("evaluate_objective: target dimension mismatch");
        Vector d = x;
        if (!target.empty()) axpy(-1.0, target, d);
        return dot(d, m * d);
    };
    auto pick = [](const std::vector<Vector>& v, int i) -> const Vector& {
        static const Vector empty;
        return v.empty() ? empty : v.at(i);
    };
    ObjectiveValue out;
    for (int n = 1; n <= steps; ++n) {
        double local = 0.0;
        if (w.tracking_y != 0.0) local += 0.5 * w.tracking_y * sq_dist(state.first[n], pick(targets.tracking_y, n - 1));
        if (w.tracking_z != 0.0)
            local += 0.5 * w.tracking_z * sq_dist(state.second[n], pick(targets.tracking_z, n - 1));
        if (w.tikhonov != 0.0) local += 0.5 * w.tikhonov * dot(u[n - 1], m * u[n - 1]);
        out.smooth += tau * local;
        out.l1 += tau * l1_integral(*model.space(), u[n - 1]);
    }
    if (w.terminal_y != 0.0) out.smooth += 0.5 * w.terminal_y * sq_dist(state.first[steps], targets.terminal_y);
    if (w.terminal_z != 0.0) out.smooth += 0.5 * w.terminal_z * sq_dist(state.second[steps], targets.terminal_z);
    out.total = out.smooth + w.sparsity * out.l1;
    return out;
}

// ---------------------------------------------------------------------------
// conjugate directions

/// Inner products needed by the beta formulas, all in L2(Q).
struct CgProducts {
    double gg_new = 0.0; ///< <g_new, g_new>
    double gg_old = 0.0; ///< <g_old, g_old>
    double gy = 0.0;     ///< <g_new, g_new - g_old>
    double dy = 0.0;     ///< <d_old, g_new - g_old>
    double yy = 0.0;     ///< <g_new - g_old, g_new - g_old>
    double dg = 0.0;     ///< <d_old, g_new>
    double dd = 0.0;     ///< <d_old, d_old>
};

inline double cg_beta(BetaVariant variant, const CgProducts& c)
{
    constexpr double tiny = 1e-300;
    switch (variant) {
    case BetaVariant::FletcherReeves: return c.gg_old > tiny ? c.gg_new / c.gg_old : 0.0;
    case BetaVariant::PolakRibiere: return c.gg_old > tiny ? std::max(0.0, c.gy / c.gg_old) : 0.0;
    case BetaVariant::HestenesStiefel: return std::abs(c.dy) > tiny ? c.gy / c.dy : 0.0;
    case BetaVariant::HagerZhang: {
        if (std::abs(c.dy) <= tiny) return 0.0;
        const double beta = (c.gy - 2.0 * c.yy * c.dg / c.dy) / c.dy;
        // lower truncation with eta = 0.01
        const double eta = -1.0 / (std::sqrt(c.dd) * std::min(0.01, std::sqrt(c.gg_old)));
        return std::max(beta, eta);
    }
    }
    return 0.0;
}

inline CgProducts cg_products(const SparseMatrix& mass, double tau, const Control& g_new, const Control& g_old,
                              const Control& d_old)
{
    Control y = g_new;
    for (std::size_t n = 0; n < y.size(); ++n) axpy(-1.0, g_old[n], y[n]);
    CgProducts c;
    c.gg_new = inner_q(mass, tau, g_new, g_new);
    c.gg_old = inner_q(mass, tau, g_old, g_old);
    c.gy = inner_q(mass, tau, g_new, y);
    c.dy = inner_q(mass, tau, d_old, y);
    c.yy = inner_q(mass, tau, y, y);
    c.dg = inner_q(mass, tau, d_old, g_new);
    c.dd = inner_q(mass, tau, d_old, d_old);
    return c;
}

/// d_new = -g_new + beta d_old (d_old empty means the first iteration).
inline Control cg_direction(const SparseMatrix& mass, double tau, const Control& g_new, const Control& g_old,
                            const Control& d_old, BetaVariant variant, double* beta_out = nullptr)
{
    double beta = 0.0;
    if (!d_old.empty()) beta = cg_beta(variant, cg_products(mass, tau, g_new, g_old, d_old));
    if (!std::isfinite(beta)) beta = 0.0;
    Control d = g_new;
    for (std::size_t n = 0; n < d.size(); ++n)
        for (std::size_t i = 0; i < d[n].size(); ++i) d[n][i] = -d[n][i] + (beta != 0.0 ? beta * d_old[n][i] : 0.0);
    if (beta_out) *beta_out = beta;
    return d;
}

// ---------------------------------------------------------------------------
// line search on a scalar model

class LineSearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LineSearchResult {
    double step = 0.0;
    double value = 0.0;
    int trials = 0;
};

/// Backtracking Armijo with halving: phi(s) <= phi(0) + c * model(s), where
/// model(s) is the predicted first-order change along the (projected) path.
inline LineSearchResult armijo_search(const std::function<double(double)>& phi,
                                      const std::function<double(double)>& predicted, double phi0, double s0,
                                      double c = 1e-4, double min_step = 1e-14, int max_trials = 60)
{
    if (!(s0 > 0.0)) throw std::invalid_argument("armijo_search: initial step must be positive");
    double s = s0;
    for (int t = 1; t <= max_trials && s >= min_step; ++t, s *= 0.5) {
        const double pred = predicted(s);
        if (!(pred < 0.0)) throw LineSearchError("not a descent direction");
        const double v = phi(s);
        if (std::isfinite(v) && v <= phi0 + c * pred) return {s, v, t};
    }
    throw LineSearchError("step size underflow");
}

// ---------------------------------------------------------------------------
// optimization loop

struct IterationRecord {
    int k = 0;
    double objective = 0.0;
    double smooth = 0.0;
    double sparse = 0.0; ///< mu j
    double gradient_norm = 0.0;
    double step = 0.0;
    long line_searches = 0; ///< cumulative
    long newton_steps = 0;  ///< cumulative
};

enum class OptimizerStatus { GradientTolerance, ObjectiveTolerance, IterationLimit, LineSearchFailed };

inline std::string to_string(OptimizerStatus s)
{
    switch (s) {
    case OptimizerStatus::GradientTolerance: return "gradient-tolerance";
    case OptimizerStatus::ObjectiveTolerance: return "objective-tolerance";
    case OptimizerStatus::IterationLimit: return "iteration-limit";
    case OptimizerStatus::LineSearchFailed: return "line-search-failed";
    }
    return "?";
}

struct OptimizerState {
    Control u;
    Trajectory state;
    Trajectory adjoint;
    Control p;      ///< adjoint activator aligned with u (p[n-1] pairs with u_n)
    Control lambda; ///< empty when mu = 0
    Control g;
    ObjectiveValue value;
    double gradient_norm = 0.0;
    int iterations = 0;
    long line_searches = 0;
    long newton_steps = 0;
    OptimizerStatus status = OptimizerStatus::IterationLimit;
    std::vector<IterationRecord> history;
};

/// Owns the problem data of one optimal control problem and evaluates the
/// reduced objective and its gradient.
class ControlProblem {
public:
    ControlProblem(const FhnModel& model, Vector y0, Vector z0, Targets targets, ObjectiveWeights weights,
                   ControlBounds bounds)
        : model_(model), y0_(std::move(y0)), z0_(std::move(z0)), targets_(std::move(targets)), w_(weights),
          bounds_(bounds)
    {
        w_.validate();
        bounds_.validate();
    }

    [[nodiscard]] const FhnModel& model() const { return model_; }
    [[nodiscard]] const ObjectiveWeights& weights() const { return w_; }
    [[nodiscard]] const ControlBounds& bounds() const { return bounds_; }
    [[nodiscard]] const Targets& targets() const { return targets_; }
    [[nodiscard]] const Vector& y0() const { return y0_; }
    [[nodiscard]] const Vector& z0() const { return z0_; }

    [[nodiscard]] Trajectory solve_state(const Control& u, SolveStats* stats = nullptr) const
    {
        return model_.forward(u, y0_, z0_, stats);
    }

    [[nodiscard]] ObjectiveValue objective(const Trajectory& state, const Control& u) const
    {
        return evaluate_objective(model_, state, u, targets_, w_);
    }

    /// J(u) with a fresh forward solve.
    [[nodiscard]] double value(const Control& u, SolveStats* stats = nullptr) const
    {
        return objective(solve_state(u, stats), u).total;
    }

    /// Fills adjoint, p, lambda and g of a state that already holds u and its trajectory.
    void differentiate(OptimizerState& s, SolveStats* stats = nullptr) const
    {
        s.adjoint = model_.adjoint(s.state, targets_, w_, stats);
        s.p.assign(s.adjoint.first.begin(), s.adjoint.first.end() - 1);
        s.lambda = w_.sparsity > 0.0 ? subgradient_lambda(s.p, w_.sparsity) : Control{};
        s.g = composite_gradient(s.u, s.p, s.lambda, w_);
        s.gradient_norm = norm_q(model_.mass(), model_.grid().tau(), s.g);
    }

private:
    const FhnModel& model_;
    Vector y0_, z0_;
    Targets targets_;
    ObjectiveWeights w_;
    ControlBounds bounds_;
};

namespace detail {

inline Control axpy_control(const Control& u, double s, const Control& d)
{
    Control out = u;
    for (std::size_t n = 0; n < out.size(); ++n) axpy(s, d[n], out[n]);
    return out;
}

/// P_box(u + t d) for mu = 0. With an L1 term the path also stays in the orthant
/// of u (of -g where u vanishes): coefficients that would change sign stop at zero.
inline Control search_path(const Control& u, double t, const Control& d, const Control& g, const ControlBounds& b,
                           bool orthant)
{
    Control out = axpy_control(u, t, d);
    if (orthant) {
        for (std::size_t n = 0; n < out.size(); ++n)
            for (std::size_t i = 0; i < out[n].size(); ++i) {
                const double side = u[n][i] != 0.0 ? u[n][i] : -g[n][i];
                if (out[n][i] * side <= 0.0) out[n][i] = 0.0;
            }
    }
    return project_control(out, b);
}

/// Zeroes the components of d that point against -g (orthant alignment).
inline void align_direction(Control& d, const Control& g)
{
    for (std::size_t n = 0; n < d.size(); ++n)
        for (std::size_t i = 0; i < d[n].size(); ++i)
            if (d[n][i] * g[n][i] > 0.0) d[n][i] = 0.0;
}

/// Gradient with the components blocked by an active bound removed.
inline Control reduced_gradient(const Control& g, const Control& u, const ControlBounds& b)
{
    Control r = g;
    for (std::size_t n = 0; n < r.size(); ++n)
        for (std::size_t i = 0; i < r[n].size(); ++i)
            if ((u[n][i] <= b.lower && g[n][i] > 0.0) || (u[n][i] >= b.upper && g[n][i] < 0.0)) r[n][i] = 0.0;
    return r;
}

/// Drops direction components that would leave the box immediately.
inline void drop_blocked(Control& d, const Control& u, const ControlBounds& b)
{
    for (std::size_t n = 0; n < d.size(); ++n)
        for (std::size_t i = 0; i < d[n].size(); ++i)
            if ((u[n][i] <= b.lower && d[n][i] < 0.0) || (u[n][i] >= b.upper && d[n][i] > 0.0)) d[n][i] = 0.0;
}

inline double max_abs(const Control& a)
{
    double m = 0.0;
    for (const auto& v : a)
        for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

} // namespace detail

using IterationCallback = std::function<void(const IterationRecord&)>;

namespace detail {

/// Row sums of the mass matrix: the integrals of the basis functions.
inline Vector lumped_mass(const SparseMatrix& mass)
{
    Vector ones(mass.rows(), 1.0);
    return mass * ones;
}

/// Gradient used by the search, in the lumped metric: q = M_L^{-1} M (omega_u u + p)
/// plus mu times the minimum norm subgradient of |u| (sign(u) off zero, the
/// clamped value on it). Zeros with |p| <= mu stay at zero. For same sign elements the L1 term equals sum M_L |u|,
/// so coefficientwise clipping along -g is a descent path.
inline Control search_gradient(const SparseMatrix& mass, const Vector& lumped, const OptimizerState& s,
                               const ObjectiveWeights& w)
{
    Control g(s.u.size());
    for (std::size_t n = 0; n < g.size(); ++n) {
        Vector v = s.p[n];
        axpy(w.tikhonov, s.u[n], v);
        g[n] = mass * v;
        for (std::size_t i = 0; i < g[n].size(); ++i) {
            double& x = g[n][i];
            x /= lumped[i];
            if (w.sparsity > 0.0) {
                if (s.u[n][i] == 0.0 && std::abs(s.p[n][i]) <= w.sparsity) {
                    x = 0.0; // inside the dead zone of the pointwise relation
                    continue;
                }
                const double xi =
                    s.u[n][i] != 0.0 ? (s.u[n][i] > 0.0 ? 1.0 : -1.0) : std::clamp(-x / w.sparsity, -1.0, 1.0);
                x += w.sparsity * xi;
            }
        }
    }
    return g;
}

inline Control negated(const Control& a)
{
    Control out = a;
    for (auto& v : out)
        for (double& x : v) x = -x;
    return out;
}

} // namespace detail

namespace detail {

/// The CG loop. `carry` continues the counters and history of an earlier run.
inline OptimizerState descend(const ControlProblem& problem, const OptimizerConfig& cfg, Control u0,
                              const IterationCallback& on_iteration, const OptimizerState* carry)
{
    cfg.validate();
    const FhnModel& model = problem.model();
    const double tau = model.grid().tau();
    const ObjectiveWeights& w = problem.weights();
    const ControlBounds& bounds = problem.bounds();
    const bool steepest_only = w.tikhonov == 0.0;
    const bool orthant = w.sparsity > 0.0;
    const Vector lumped = detail::lumped_mass(model.mass());
    std::vector<Triplet> diag;
    for (int i = 0; i < static_cast<int>(lumped.size()); ++i) diag.push_back({i, i, lumped[i]});
    const SparseMatrix metric = SparseMatrix::from_triplets(model.dim(), model.dim(), diag);

    SolveStats stats;
    OptimizerState s;
    if (carry) {
        s.iterations = carry->iterations;
        s.line_searches = carry->line_searches;
        s.history = carry->history;
        stats.newton_iterations = carry->newton_steps;
    }
    s.u = project_control(u0.empty() ? zero_control(*model.space(), model.grid()) : std::move(u0), bounds);
    s.state = problem.solve_state(s.u, &stats);
    s.value = problem.objective(s.state, s.u);
    auto measure = [&](OptimizerState& st) {
        if (cfg.gradient_norm == GradientNorm::Euclidean) {
            double sum = 0.0;
            for (const auto& v : st.g) sum += dot(v, v);
            st.gradient_norm = std::sqrt(sum);
        }
    };
    problem.differentiate(s, &stats);
    measure(s);
    Control gs = detail::search_gradient(model.mass(), lumped, s, w);

    auto record = [&](double step) {
        IterationRecord r{s.iterations, s.value.total, s.value.smooth, s.value.sparse_part(w), s.gradient_norm,
                          step, s.line_searches, stats.newton_iterations};
        s.newton_steps = stats.newton_iterations;
        s.history.push_back(r);
        if (on_iteration) on_iteration(r);
    };
    if (!carry) record(0.0);

    if (s.gradient_norm < cfg.gradient_tolerance) {
        s.status = OptimizerStatus::GradientTolerance;
        return s;
    }

    // CG runs on the search gradient reduced to the free coefficients
    auto steepest = [&] { return detail::negated(detail::reduced_gradient(gs, s.u, bounds)); };
    auto path = [&](double t, const Control& d) { return detail::search_path(s.u, t, d, gs, bounds, orthant); };
    auto change = [&](const Control& v) {
        Control du = v;
        for (std::size_t n = 0; n < du.size(); ++n) axpy(-1.0, s.u[n], du[n]);
        return inner_q(metric, tau, gs, du);
    };
    Control d = steepest();
    Control g_old;
    double step_prev = 0.0, slope_prev = 0.0;
    bool restarted_after_failure = false;
    int since_restart = 0;

    while (s.iterations < cfg.max_iterations) {
        detail::drop_blocked(d, s.u, bounds);
        if (orthant) detail::align_direction(d, gs);
        double slope = inner_q(metric, tau, gs, d);
        if (!(slope < 0.0) || since_restart >= cfg.restart_every) {
            d = steepest();
            slope = inner_q(metric, tau, gs, d);
            since_restart = 0;
            // every coefficient that could lower J sits on a bound
            if (!(slope < 0.0)) {
                s.status = OptimizerStatus::GradientTolerance;
                break;
            }
        }
        // initial trial step
        double s0 = cfg.initial_step;
        if (step_prev > 0.0) {
            s0 = std::min(step_prev * slope_prev / slope, 4.0 * step_prev);
        } else if (!(s0 > 0.0)) {
            const double dmax = detail::max_abs(d);
            const double umax = detail::max_abs(s.u);
            if (umax > 0.0 && dmax > 0.0)
                s0 = 0.01 * umax / dmax;
            else if (s.value.total > 0.0 && slope < 0.0)
                s0 = 0.01 * s.value.total / -slope;
            else
                s0 = 1.0;
        }

        OptimizerState trial;
        double accepted = 0.0;
        try {
            if (cfg.line_search == LineSearchStrategy::Armijo) {
                Trajectory trial_state;
                Control trial_u;
                ObjectiveValue trial_value;
                auto phi = [&](double t) {
                    trial_u = path(t, d);
                    ++s.line_searches;
                    try {
                        trial_state = problem.solve_state(trial_u, &stats);
                    } catch (const NewtonError&) {
                        return std::numeric_limits<double>::infinity();
                    }
                    trial_value = problem.objective(trial_state, trial_u);
                    return trial_value.total;
                };
                auto predicted = [&](double t) { return change(path(t, d)); };
                const auto ls = armijo_search(phi, predicted, s.value.total, s0, cfg.armijo, cfg.min_step,
                                              cfg.max_trials);
                accepted = ls.step;
                trial.u = std::move(trial_u);
                trial.state = std::move(trial_state);
                trial.value = trial_value;
                // first trial accepted: the step may be far too short, so try the minimiser
                // of the quadratic through phi(0), phi'(0) and phi(step)
                if (ls.trials == 1) {
                    const double curv = ls.value - s.value.total - slope * accepted;
                    if (curv > 0.0) {
                        const double t = std::min(-slope * accepted * accepted / (2.0 * curv), 10.0 * accepted);
                        if (t > 1.5 * accepted) {
                            const double v = phi(t);
                            if (v < trial.value.total && v <= s.value.total + cfg.armijo * predicted(t)) {
                                accepted = t;
                                trial.u = std::move(trial_u);
                                trial.state = std::move(trial_state);
                                trial.value = trial_value;
                            }
                        }
                    }
                }
                problem.differentiate(trial, &stats);
            } else {
                // bisection for the weak Wolfe conditions along the projected path; the
                // last point satisfying the sufficient decrease test is kept as a fallback
                double lo = 0.0, hi = std::numeric_limits<double>::infinity(), t = s0;
                for (int it = 0; it < cfg.max_trials && t >= cfg.min_step; ++it) {
                    OptimizerState cand;
                    cand.u = path(t, d);
                    const double pred = change(cand.u);
                    if (!(pred < 0.0)) throw LineSearchError("not a descent direction");
                    ++s.line_searches;
                    bool ok = true;
                    try {
                        cand.state = problem.solve_state(cand.u, &stats);
                        cand.value = problem.objective(cand.state, cand.u);
                        ok = cand.value.total <= s.value.total + cfg.armijo * pred;
                    } catch (const NewtonError&) {
                        ok = false;
                    }
                    if (!ok) {
                        hi = t;
                    } else {
                        problem.differentiate(cand, &stats);
                        const Control gc = detail::search_gradient(model.mass(), lumped, cand, w);
                        const bool curvature = inner_q(metric, tau, gc, d) >= cfg.wolfe * slope;
                        trial = std::move(cand);
                        accepted = t;
                        if (curvature) break;
                        lo = t;
                    }
                    t = std::isinf(hi) ? 2.0 * t : 0.5 * (lo + hi);
                    if (lo > 0.0 && !std::isinf(hi) && hi - lo < 1e-3 * lo) break;
                }
                if (!(accepted > 0.0)) throw LineSearchError("step size underflow");
            }
        } catch (const LineSearchError&) {
            if (restarted_after_failure || since_restart == 0) {
                s.status = OptimizerStatus::LineSearchFailed;
                break;
            }
            restarted_after_failure = true;
            d = steepest();
            since_restart = 0;
            step_prev = 0.0;
            continue;
        }
        restarted_after_failure = false;

        const double j_old = s.value.total;
        g_old = detail::reduced_gradient(gs, s.u, bounds);
        const Control d_old = std::move(d);
        s.u = std::move(trial.u);
        s.state = std::move(trial.state);
        s.adjoint = std::move(trial.adjoint);
        s.p = std::move(trial.p);
        s.lambda = std::move(trial.lambda);
        s.g = std::move(trial.g);
        s.value = trial.value;
        s.gradient_norm = trial.gradient_norm;
        measure(s);
        gs = detail::search_gradient(model.mass(), lumped, s, w);
        ++s.iterations;
        ++since_restart;
        step_prev = accepted;
        slope_prev = slope;
        record(accepted);

        if (s.gradient_norm < cfg.gradient_tolerance) {
            s.status = OptimizerStatus::GradientTolerance;
            break;
        }
        if (std::abs(s.value.total - j_old) <= cfg.objective_tolerance) {
            // a stalled conjugate step gets one steepest descent retry before stopping
            if (steepest_only || since_restart == 1) {
                s.status = OptimizerStatus::ObjectiveTolerance;
                break;
            }
            d = steepest();
            since_restart = 0;
            continue;
        }
        d = steepest_only ? steepest()
                          : cg_direction(metric, tau, detail::reduced_gradient(gs, s.u, bounds), g_old, d_old, cfg.beta);
    }

    s.newton_steps = stats.newton_iterations;
    return s;
}

} // namespace detail

/// Projected nonlinear CG. With omega_u = 0 every step is a projected
/// subgradient step. With mu > 0 the result is then thresholded: u is set to
/// zero where |p| <= mu and the descent continues from there, as long as J
/// stays within snap_tolerance of the unthresholded value.
inline OptimizerState optimize(const ControlProblem& problem, const OptimizerConfig& cfg, Control u0 = {},
                               const IterationCallback& on_iteration = {})
{
    OptimizerState s = detail::descend(problem, cfg, std::move(u0), on_iteration, nullptr);
    const double mu = problem.weights().sparsity;
    if (!cfg.snap_sparsity || !(mu > 0.0)) return s;
    for (int pass = 0; pass < 5; ++pass) {
        Control snapped = s.u;
        bool changed = false;
        for (std::size_t n = 0; n < snapped.size(); ++n)
            for (std::size_t i = 0; i < snapped[n].size(); ++i)
                if (snapped[n][i] != 0.0 && std::abs(s.p[n][i]) <= mu) {
                    snapped[n][i] = 0.0;
                    changed = true;
                }
        if (!changed) break;
        // plain thresholding first; when that costs too much, descend again from the thresholded point
        OptimizerState cut;
        cut.u = snapped;
        SolveStats stats;
        try {
            cut.state = problem.solve_state(cut.u, &stats);
        } catch (const NewtonError&) {
            break;
        }
        ++s.line_searches;
        s.newton_steps += stats.newton_iterations;
        stats = {};
        cut.value = problem.objective(cut.state, cut.u);
        if (cut.value.total <= s.value.total * (1.0 + cfg.snap_tolerance)) {
            problem.differentiate(cut, &stats);
            cut.iterations = s.iterations;
            cut.line_searches = s.line_searches;
            cut.newton_steps = s.newton_steps + stats.newton_iterations;
            cut.status = s.status;
            cut.history = std::move(s.history);
            if (cfg.gradient_norm == GradientNorm::Euclidean) {
                double sum = 0.0;
                for (const auto& v : cut.g) sum += dot(v, v);
                cut.gradient_norm = std::sqrt(sum);
            }
            s = std::move(cut);
            continue;
        }
        std::vector<IterationRecord> pending;
        OptimizerState t;
        try {
            t = detail::descend(problem, cfg, std::move(snapped),
                                [&](const IterationRecord& r) { pending.push_back(r); }, &s);
        } catch (const NewtonError&) {
            break;
        }
        if (t.value.total > s.value.total * (1.0 + cfg.snap_tolerance)) break;
        if (on_iteration)
            for (const auto& r : pending) on_iteration(r);
        s = std::move(t);
    }
    return s;
}

} // namespace fhn
