#include "fhn/fhn_solver.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace fhn;

namespace {

FhnProblem channel_problem(const ChannelGeometry& g, double vmax, TimeGrid grid, ReactionParams r = {})
{
    const auto v = VelocityField::from_vmax(vmax, g.height);
    auto mesh = std::make_shared<const Mesh>(classify_edges(build_channel_mesh(g), {}, v));
    FhnProblem p;
    p.space = std::make_shared<const DgSpace>(mesh);
    p.reaction = r;
    p.sipg_y.velocity = v;
    p.sipg_z.velocity = v;
    p.grid = grid;
    return p;
}

/// Backward Euler for the spatially constant system
/// (y - y0)/tau + g(y) + z = u,  (z - z0)/tau + eps z - eps c3 y = 0.
std::vector<std::pair<double, double>> scalar_ode(const ReactionParams& r, double y0, double z0, double u, double tau,
                                                  int steps)
{
    std::vector<std::pair<double, double>> out{{y0, z0}};
    for (int n = 0; n < steps; ++n) {
        const auto [yp, zp] = out.back();
        double y = yp;
        // eliminate z = (zp/tau + eps c3 y) / (1/tau + eps)
        const double den = 1.0 / tau + r.epsilon;
        for (int it = 0; it < 50; ++it) {
            const double z = (zp / tau + r.epsilon * r.c3 * y) / den;
            const double f = (y - yp) / tau + r.g(y) + z - u;
            const double df = 1.0 / tau + r.dg(y) + r.epsilon * r.c3 / den;
            const double dy = f / df;
            y -= dy;
            if (std::abs(dy) < 1e-16 * std::max(1.0, std::abs(y))) break;
        }
        out.push_back({y, (zp / tau + r.epsilon * r.c3 * y) / den});
    }
    return out;
}

double max_deviation(const Vector& v, double c)
{
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x - c));
    return m;
}

Vector random_vector(int n, unsigned seed, double scale)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Vector v(n);
    for (double& x : v) x = u(rng);
    return v;
}

/// Rightmost element centroid whose mean activator value exceeds the threshold.
double front_position(const DgSpace& space, const Vector& y, double threshold)
{
    double front = 0.0;
    for (int k = 0; k < space.num_elements(); ++k) {
        const double mean = (y[space.dof(k, 0)] + y[space.dof(k, 1)] + y[space.dof(k, 2)]) / 3.0;
        if (mean > threshold) front = std::max(front, space.mesh().centroid(k)[0]);
    }
    return front;
}

} // namespace

TEST(TimeGrid, NodesAndValidation)
{
    const TimeGrid g{1.0, 3};
    EXPECT_DOUBLE_EQ(g.tau(), 1.0 / 3.0);
    EXPECT_EQ(g.time(3), 1.0);
    EXPECT_EQ(g.time(0), 0.0);
    EXPECT_THROW((TimeGrid{0.0, 3}.validate()), std::invalid_argument);
    EXPECT_THROW((TimeGrid{1.0, 0}.validate()), std::invalid_argument);
}

TEST(ForwardSolve, ZeroEquilibriumIsPreserved)
{
    const FhnModel model(channel_problem({20.0, 5.0, 20, 4}, 16.0, {1.0, 20}));
    const Vector zero(model.dim(), 0.0);
    SolveStats stats;
    const Trajectory t = forward_solve(model, {}, zero, zero, &stats);
    ASSERT_EQ(t.nodes(), 21);
    for (int n = 0; n <= 20; ++n) {
        EXPECT_EQ(max_deviation(t.first[n], 0.0), 0.0);
        EXPECT_EQ(max_deviation(t.second[n], 0.0), 0.0);
    }
    EXPECT_EQ(stats.newton_iterations, 0);
    const Vector yz(2 * model.dim(), 0.0);
    EXPECT_LE(norm2(model.step_residual(yz, zero, zero, zero)), 1e-12);
}

TEST(ForwardSolve, ConstantDataMatchesScalarOde)
{
    // no convection: constants lie in the kernel of the Neumann diffusion operator
    const ReactionParams r;
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 0.0, {1.0, 20}, r));
    const int n = model.dim();
    const double y0 = 0.3, z0 = 0.05, u = 0.1;
    const Trajectory t = forward_solve(model, Control(20, Vector(n, u)), Vector(n, y0), Vector(n, z0));
    const auto ode = scalar_ode(r, y0, z0, u, 0.05, 20);
    for (int k = 0; k <= 20; ++k) {
        EXPECT_LE(max_deviation(t.first[k], ode[k].first), 1e-8) << "step " << k;
        EXPECT_LE(max_deviation(t.second[k], ode[k].second), 1e-8) << "step " << k;
    }
}

TEST(ForwardSolve, BackwardEulerIsFirstOrder)
{
    const ReactionParams r;
    const double y0 = 0.3, z0 = 0.0, u = -0.05;
    const double reference = scalar_ode(r, y0, z0, u, 1.0 / 40960, 40960).back().first;
    std::vector<double> err;
    for (int steps : {10, 20, 40}) {
        const FhnModel model(channel_problem({4.0, 2.0, 2, 2}, 0.0, {1.0, steps}, r));
        const int n = model.dim();
        const Trajectory t = forward_solve(model, Control(steps, Vector(n, u)), Vector(n, y0), Vector(n, z0));
        err.push_back(max_deviation(t.first.back(), reference));
    }
    EXPECT_GE(std::log2(err[0] / err[1]), 0.8);
    EXPECT_GE(std::log2(err[1] / err[2]), 0.8);
}

TEST(NewtonStep, LinearizedProblemNeedsOneIteration)
{
    ReactionParams r;
    r.c1 = 0.0;
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 16.0, {1.0, 20}, r));
    const int n = model.dim();
    NewtonReport rep;
    (void)model.newton_step(random_vector(n, 1, 0.5), random_vector(n, 2, 0.1), random_vector(n, 3, 0.2), 1, &rep);
    EXPECT_EQ(rep.iterations, 1);
    EXPECT_LE(rep.residuals.back(), 1e-10);
}

TEST(NewtonStep, ZeroStateConvergesImmediately)
{
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 16.0, {1.0, 20}));
    const Vector zero(model.dim(), 0.0);
    NewtonReport rep;
    const Vector x = model.newton_step(zero, zero, zero, 1, &rep);
    EXPECT_LE(rep.iterations, 1);
    EXPECT_EQ(max_deviation(x, 0.0), 0.0);
}

TEST(NewtonStep, GenericStepConvergesQuadratically)
{
    const FhnModel model(channel_problem({10.0, 5.0, 20, 6}, 32.0, {1.0, 20}));
    const int n = model.dim();
    Vector y0 = random_vector(n, 5, 0.5);
    for (double& v : y0) v += 0.5;
    NewtonReport rep;
    (void)model.newton_step(y0, random_vector(n, 6, 0.1), random_vector(n, 7, 0.3), 1, &rep);
    ASSERT_GE(rep.iterations, 2);
    EXPECT_LE(rep.residuals.back(), 1e-10);
    for (std::size_t k = 1; k < rep.residuals.size(); ++k) EXPECT_LT(rep.residuals[k], rep.residuals[k - 1]);
    // once in the basin, r_{k+1} <= C r_k^2 with a moderate constant
    for (std::size_t k = 1; k + 1 < rep.residuals.size(); ++k)
        if (rep.residuals[k] < 1e-2 && rep.residuals[k + 1] > 1e-13) {
            EXPECT_LT(rep.residuals[k + 1] / (rep.residuals[k] * rep.residuals[k]), 1e3);
        }
}

TEST(NewtonStep, IterationCapReported)
{
    FhnProblem p = channel_problem({10.0, 5.0, 10, 2}, 16.0, {1.0, 2});
    p.newton.max_iterations = 1;
    const FhnModel model(p);
    const int n = model.dim();
    try {
        (void)model.newton_step(Vector(n, 0.8), Vector(n, 0.0), Vector(n, 0.0), 7);
        FAIL() << "expected a Newton failure";
    } catch (const NewtonError& e) {
        EXPECT_EQ(e.step(), 7);
        EXPECT_GT(e.residual(), 1e-10);
    }
}

TEST(Adjoint, SystemMatrixIsTransposeOfStepMatrix)
{
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 64.0, {1.0, 20}));
    const SparseMatrix diff = add_scaled(model.adjoint_matrix(), model.state_matrix().transpose(), 1.0, -1.0);
    EXPECT_LE(diff.max_abs(), 1e-12 * model.state_matrix().max_abs());
}

TEST(Adjoint, ZeroMisfitGivesZeroAdjoint)
{
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 16.0, {1.0, 10}));
    const auto space = model.space();
    const Vector y0 = l2_project(space, [](const Point& x) { return x[0] <= 1.0 ? 0.5 : 0.0; }).coeffs;
    const Trajectory state = forward_solve(model, {}, y0, Vector(model.dim(), 0.0));

    Targets perfect = tracking_targets(state, 10);
    const Trajectory a = adjoint_solve(model, state, perfect, {1.0, 1.0, 0.0, 0.0});
    for (int n = 0; n <= 10; ++n) {
        EXPECT_EQ(max_deviation(a.first[n], 0.0), 0.0);
        EXPECT_EQ(max_deviation(a.second[n], 0.0), 0.0);
    }
    const Trajectory b = adjoint_solve(model, state, terminal_targets(state, 10), {0.0, 0.0, 1.0, 1.0});
    for (int n = 0; n <= 10; ++n) EXPECT_EQ(max_deviation(b.first[n], 0.0), 0.0);
}

TEST(Adjoint, LinearInTheMisfit)
{
    const FhnModel model(channel_problem({10.0, 5.0, 10, 4}, 16.0, {1.0, 10}));
    const int n = model.dim();
    const Trajectory state = forward_solve(model, {}, l2_project(model.space(), [](const Point& x) {
                                                          return x[0] <= 1.0 ? 0.5 : 0.0;
                                                      }).coeffs,
                                           Vector(n, 0.0));
    const ObjectiveWeights w{1.0, 0.5, 0.0, 0.0};
    auto shifted = [&](double alpha) {
        // targets y - alpha * delta so that the misfit is alpha * delta
        Targets t;
        for (int k = 1; k <= 10; ++k) {
            Vector ty = state.first[k], tz = state.second[k];
            axpy(-alpha, random_vector(n, 100 + k, 0.1), ty);
            axpy(-alpha, random_vector(n, 200 + k, 0.1), tz);
            t.tracking_y.push_back(ty);
            t.tracking_z.push_back(tz);
        }
        return adjoint_solve(model, state, t, w);
    };
    const Trajectory a1 = shifted(1.0);
    const Trajectory a3 = shifted(3.0);
    for (int k = 0; k < 10; ++k) {
        Vector d = a3.first[k];
        axpy(-3.0, a1.first[k], d);
        EXPECT_LE(norm2(d), 1e-12 * norm2(a3.first[k])) << k;
        Vector e = a3.second[k];
        axpy(-3.0, a1.second[k], e);
        EXPECT_LE(norm2(e), 1e-12 * norm2(a3.second[k])) << k;
    }
}

TEST(ForwardSolve, WaveFrontAdvancesFasterWithStrongerFlow)
{
    // first example setup up to t = 0.75; the inflow face carries the trace of the initial pulse
    double previous = 0.0;
    const BoundaryFunction pulse = [](const Point& x) { return x[0] <= 0.1 ? 0.1 : 0.0; };
    for (double vmax : {16.0, 32.0, 64.0, 128.0}) {
        FhnProblem p = channel_problem({100.0, 5.0, 200, 10}, vmax, {0.75, 15});
        p.data_y = pulse;
        const FhnModel model(p);
        const Vector y0 = l2_project(model.space(), pulse).coeffs;
        const Trajectory t = forward_solve(model, {}, y0, Vector(model.dim(), 0.0));
        const double front = front_position(*model.space(), t.first.back(), 0.05);
        EXPECT_GT(front, previous) << "V_max = " << vmax;
        previous = front;
    }
}

TEST(NaturalTargets, TrackingTargetsVanishAfterHalfTime)
{
    const FhnModel model(channel_problem({10.0, 5.0, 10, 2}, 16.0, {1.0, 20}));
    const Vector y0 = l2_project(model.space(), [](const Point& x) { return x[0] <= 1.0 ? 0.5 : 0.0; }).coeffs;
    const Trajectory nat = forward_solve(model, {}, y0, Vector(model.dim(), 0.0));
    const Targets t = tracking_targets(nat, 10);
    ASSERT_EQ(t.tracking_y.size(), 20u);
    for (int n = 1; n <= 20; ++n) {
        if (n <= 10) {
            EXPECT_EQ(t.tracking_y[n - 1], nat.first[n]);
            EXPECT_GT(max_deviation(t.tracking_y[n - 1], 0.0), 0.0);
        } else {
            EXPECT_EQ(max_deviation(t.tracking_y[n - 1], 0.0), 0.0);
            EXPECT_EQ(max_deviation(t.tracking_z[n - 1], 0.0), 0.0);
        }
    }
}

TEST(NaturalTargets, TerminalTargetsOfSecondExample)
{
    const FhnModel model(channel_problem({20.0, 5.0, 40, 4}, 64.0, {1.0, 20}));
    const int n = model.dim();
    const Trajectory zero = forward_solve(model, {}, Vector(n, 0.0), Vector(n, 0.0));
    EXPECT_EQ(max_deviation(terminal_targets(zero, 10).terminal_y, 0.0), 0.0);

    const Vector y0 =
        l2_project(model.space(), [](const Point& x) { return x[0] >= 2.0 && x[0] <= 2.2 ? 1.0 : 0.0; }).coeffs;
    const Trajectory nat = forward_solve(model, {}, y0, Vector(n, 0.0));
    const Targets t = terminal_targets(nat, 10);
    EXPECT_GT(max_deviation(t.terminal_y, 0.0), 1e-3);
    // centre of mass of the activator target lies downstream of the pulse
    const Vector m1 = model.mass() * t.terminal_y;
    double mass = 0.0, moment = 0.0;
    const DgSpace& space = *model.space();
    for (int k = 0; k < space.num_elements(); ++k)
        for (int i = 0; i < 3; ++i) {
            mass += m1[space.dof(k, i)];
            moment += m1[space.dof(k, i)] * space.mesh().vertices[space.mesh().triangles[k][i]][0];
        }
    EXPECT_GT(moment / mass, 2.2);
}
