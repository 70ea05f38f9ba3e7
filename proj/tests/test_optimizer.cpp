#include "fhn/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace fhn;

namespace {

struct Case {
    std::unique_ptr<FhnModel> model;
    Vector y0, z0;
    Trajectory natural;
};

/// Coarse version of the first example: pulse at the inflow face, natural targets up to T/2.
Case coarse_first_example(int nx, int ny, int steps, double vmax = 16.0)
{
    const ChannelGeometry g{100.0, 5.0, nx, ny};
    const auto v = VelocityField::from_vmax(vmax, g.height);
    const BoundaryFunction pulse = [](const Point& x) { return x[0] <= 0.1 ? 0.1 : 0.0; };
    FhnProblem p;
    p.space = std::make_shared<const DgSpace>(std::make_shared<const Mesh>(classify_edges(build_channel_mesh(g), {}, v)));
    p.sipg_y.velocity = v;
    p.sipg_z.velocity = v;
    p.data_y = pulse;
    p.grid = {1.0, steps};
    Case s;
    s.model = std::make_unique<FhnModel>(p);
    s.y0 = l2_project(p.space, pulse).coeffs;
    s.z0.assign(s.model->dim(), 0.0);
    s.natural = s.model->forward({}, s.y0, s.z0);
    return s;
}

Control random_control(int steps, int n, unsigned seed, double scale)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    Control c(steps, Vector(n));
    for (auto& v : c)
        for (double& x : v) x = u(rng);
    return c;
}

Control constant_control(int steps, int n, double c) { return Control(steps, Vector(n, c)); }

} // namespace

TEST(Objective, PerfectTrackingIsZero)
{
    const Case s = coarse_first_example(20, 2, 4);
    const Targets t = tracking_targets(s.natural, 4);
    const ObjectiveValue v = evaluate_objective(*s.model, s.natural, zero_control(*s.model->space(), s.model->grid()), t,
                                                {1.0, 1.0, 0.0, 0.0, 1e-5, 0.01});
    EXPECT_EQ(v.total, 0.0);
}

TEST(Objective, ConstantControlIntegrals)
{
    const Case s = coarse_first_example(20, 2, 4);
    const double c = -0.3;
    const Control u = constant_control(4, s.model->dim(), c);
    const ObjectiveWeights w{0.0, 0.0, 0.0, 0.0, 2e-3, 0.5};
    const ObjectiveValue v = evaluate_objective(*s.model, s.natural, u, {}, w);
    const double volume = 100.0 * 5.0 * 1.0;
    EXPECT_NEAR(v.smooth, 0.5 * 2e-3 * c * c * volume, 1e-12);
    EXPECT_NEAR(v.l1, std::abs(c) * volume, 1e-10);
    EXPECT_NEAR(v.total, v.smooth + 0.5 * v.l1, 1e-12);
    EXPECT_THROW(evaluate_objective(*s.model, s.natural, Control(3, Vector(s.model->dim())), {}, w),
                 std::invalid_argument);
}

TEST(Formulas, SubgradientLambda)
{
    const Control p{{0.0, 0.005, -0.001, 0.1, -0.1}};
    const Control l = subgradient_lambda(p, 1.0 / 200);
    EXPECT_EQ(l[0][0], 0.0);
    EXPECT_DOUBLE_EQ(l[0][1], -1.0);
    EXPECT_DOUBLE_EQ(l[0][2], 0.2);
    EXPECT_EQ(l[0][3], -1.0);
    EXPECT_EQ(l[0][4], 1.0);
    EXPECT_DOUBLE_EQ(subgradient_lambda({{-0.001}}, 1.0 / 100)[0][0], 0.1);
    EXPECT_THROW(subgradient_lambda(p, 0.0), std::invalid_argument);
}

TEST(Formulas, CompositeGradient)
{
    const Control u{{1.0, -2.0}}, p{{0.5, 0.25}}, lambda{{-1.0, 0.5}};
    const Control g0 = composite_gradient(u, p, {}, {});
    EXPECT_EQ(g0, p);
    const Control g = composite_gradient(u, p, lambda, {0, 0, 0, 0, 0.1, 0.2});
    EXPECT_DOUBLE_EQ(g[0][0], 0.1 + 0.5 - 0.2);
    EXPECT_DOUBLE_EQ(g[0][1], -0.2 + 0.25 + 0.1);
}

TEST(Formulas, Projection)
{
    const Control v{{-5.0, 0.3, 7.0}};
    EXPECT_EQ(project_control(v, {}), v);
    const ControlBounds box{-0.2, 0.0};
    const Control c = project_control(v, box);
    EXPECT_EQ(c[0][0], -0.2);
    EXPECT_EQ(c[0][1], 0.0);
    const ObjectiveWeights w{0, 0, 0, 0, 1e-5, 0.0};
    EXPECT_EQ(projection_formula({{0.1}}, {}, w, box)[0][0], -0.2);
    EXPECT_EQ(projection_formula({{-1e-6}}, {}, w, box)[0][0], 0.0);
    EXPECT_THROW(projection_formula({{0.1}}, {}, {}, box), std::invalid_argument);
    EXPECT_THROW((ControlBounds{1.0, 0.0}.validate()), std::invalid_argument);
}

TEST(Formulas, ProjectionFormulaVanishesInsideTheDeadZone)
{
    const double mu = 0.01;
    const ObjectiveWeights w{0, 0, 0, 0, 1e-5, mu};
    const Control p{{-0.0099, 0.0, 0.005, 0.0100001, -0.02}};
    const Control u = projection_formula(p, subgradient_lambda(p, mu), w, {-0.2, 0.2});
    EXPECT_EQ(u[0][0], 0.0);
    EXPECT_EQ(u[0][1], 0.0);
    EXPECT_EQ(u[0][2], 0.0);
    EXPECT_NEAR(u[0][3], -0.01, 1e-9);
    EXPECT_EQ(u[0][4], 0.2);
}

TEST(ConjugateGradient, BetaFormulas)
{
    const SparseMatrix id = SparseMatrix::identity(2);
    const Control g{{1.0, 0.0}};
    const Control d1 = cg_direction(id, 1.0, g, {}, {}, BetaVariant::HagerZhang);
    EXPECT_EQ(d1, (Control{{-1.0, 0.0}}));

    double beta = -1.0;
    (void)cg_direction(id, 1.0, g, g, d1, BetaVariant::FletcherReeves, &beta);
    EXPECT_DOUBLE_EQ(beta, 1.0);
    (void)cg_direction(id, 1.0, g, g, d1, BetaVariant::PolakRibiere, &beta);
    EXPECT_DOUBLE_EQ(beta, 0.0);
    const Control g2{{0.0, 1.0}};
    (void)cg_direction(id, 1.0, g2, g, d1, BetaVariant::PolakRibiere, &beta);
    EXPECT_DOUBLE_EQ(beta, 1.0);

    // exact line search (d_old orthogonal to g_new): Hager-Zhang reduces to Hestenes-Stiefel
    double hs = 0.0, hz = 0.0;
    (void)cg_direction(id, 1.0, g2, g, d1, BetaVariant::HestenesStiefel, &hs);
    (void)cg_direction(id, 1.0, g2, g, d1, BetaVariant::HagerZhang, &hz);
    EXPECT_DOUBLE_EQ(hs, 1.0);
    EXPECT_DOUBLE_EQ(hz, hs);

    EXPECT_EQ(parse_beta_variant("hz"), BetaVariant::HagerZhang);
    EXPECT_EQ(parse_beta_variant(to_string(BetaVariant::HestenesStiefel)), BetaVariant::HestenesStiefel);
    EXPECT_THROW(parse_beta_variant("newton"), std::invalid_argument);
}

TEST(ConjugateGradient, ConvergesOnQuadraticInNSteps)
{
    // minimise 1/2 x^T A x - b^T x with an exact line search: every variant is linear CG
    const SparseMatrix a = SparseMatrix::from_triplets(3, 3, {{0, 0, 4}, {0, 1, 1}, {1, 0, 1}, {1, 1, 3}, {2, 2, 2}});
    const Vector b{1.0, 2.0, 3.0};
    const SparseMatrix id = SparseMatrix::identity(3);
    for (auto variant : {BetaVariant::FletcherReeves, BetaVariant::PolakRibiere, BetaVariant::HestenesStiefel,
                         BetaVariant::HagerZhang}) {
        Vector x(3, 0.0);
        auto grad = [&](const Vector& v) {
            Vector g = a * v;
            axpy(-1.0, b, g);
            return Control{g};
        };
        Control g = grad(x), g_old, d;
        for (int k = 0; k < 3; ++k) {
            d = cg_direction(id, 1.0, g, g_old, d, variant);
            const Vector ad = a * d[0];
            const double step = -dot(g[0], d[0]) / dot(d[0], ad);
            axpy(step, d[0], x);
            g_old = g;
            g = grad(x);
        }
        EXPECT_LE(norm2(g[0]), 1e-12) << to_string(variant);
    }
}

TEST(LineSearch, ArmijoOnScalarQuadratic)
{
    auto phi = [](double s) { return (s - 1.0) * (s - 1.0); };
    auto pred = [](double s) { return -2.0 * s; };
    const auto r = armijo_search(phi, pred, 1.0, 8.0);
    EXPECT_DOUBLE_EQ(r.step, 1.0);
    EXPECT_EQ(r.trials, 4);
    EXPECT_LT(r.value, 1.0);
    EXPECT_THROW(armijo_search(phi, [](double) { return 0.0; }, 1.0, 1.0), LineSearchError);
    // an objective that never decreases underflows
    EXPECT_THROW(armijo_search([](double) { return 2.0; }, pred, 1.0, 1.0), LineSearchError);
}

TEST(Gradient, MatchesCentralDifferences)
{
    const Case s = coarse_first_example(40, 4, 10);
    const int n = s.model->dim();
    const ObjectiveWeights w{1.0, 1.0, 0.0, 0.0, 1e-5, 0.0};
    const ControlProblem problem(*s.model, s.y0, s.z0, tracking_targets(s.natural, 5), w, {});
    OptimizerState st;
    st.u = random_control(10, n, 1, 0.05);
    st.state = problem.solve_state(st.u);
    problem.differentiate(st);
    const double h = 1e-5;
    for (unsigned dir = 0; dir < 5; ++dir) {
        const Control du = random_control(10, n, 10 + dir, 1.0);
        Control up = st.u, um = st.u;
        for (int k = 0; k < 10; ++k) {
            axpy(h, du[k], up[k]);
            axpy(-h, du[k], um[k]);
        }
        const double fd = (problem.value(up) - problem.value(um)) / (2.0 * h);
        const double ad = inner_q(s.model->mass(), s.model->grid().tau(), st.g, du);
        EXPECT_LE(std::abs(fd - ad), 1e-4 * std::abs(ad)) << "direction " << dir << ": fd " << fd << " adjoint " << ad;
    }
}

TEST(Optimize, OptimalInitialGuessStopsImmediately)
{
    const Case s = coarse_first_example(20, 2, 6);
    const ControlProblem problem(*s.model, s.y0, s.z0, tracking_targets(s.natural, 6), {1.0, 1.0, 0.0, 0.0, 1e-5, 0.0},
                                 {});
    const OptimizerState r = optimize(problem, {});
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.status, OptimizerStatus::GradientTolerance);
    EXPECT_LE(r.value.total, 1e-20);
}

TEST(Optimize, BoxConstrainedRunIsFeasibleAndMonotone)
{
    const Case s = coarse_first_example(40, 4, 10);
    const ControlBounds box{-0.2, 0.0};
    const ControlProblem problem(*s.model, s.y0, s.z0, tracking_targets(s.natural, 5), {1.0, 1.0, 0.0, 0.0, 1e-5, 0.0},
                                 box);
    OptimizerConfig cfg;
    cfg.max_iterations = 30;
    const OptimizerState r = optimize(problem, cfg);
    ASSERT_GE(r.iterations, 2);
    for (const auto& v : r.u)
        for (double x : v) {
            EXPECT_GE(x, -0.2);
            EXPECT_LE(x, 0.0);
        }
    for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LT(r.history[k].objective, r.history[k - 1].objective);
    EXPECT_LT(r.value.total, r.history.front().objective);
}

TEST(Optimize, SparseRunKeepsLambdaInRangeAndVanishesInsideTheDeadZone)
{
    const Case s = coarse_first_example(40, 4, 10);
    const double mu = 1.0 / 200;
    const ControlProblem problem(*s.model, s.y0, s.z0, tracking_targets(s.natural, 5), {1.0, 1.0, 0.0, 0.0, 1e-5, mu},
                                 {-0.2, 0.0});
    OptimizerConfig cfg;
    cfg.snap_tolerance = std::numeric_limits<double>::infinity();
    const OptimizerState r = optimize(problem, cfg);
    ASSERT_EQ(r.lambda.size(), r.p.size());
    for (std::size_t n = 0; n < r.p.size(); ++n)
        for (std::size_t i = 0; i < r.p[n].size(); ++i) {
            EXPECT_GE(r.lambda[n][i], -1.0);
            EXPECT_LE(r.lambda[n][i], 1.0);
            if (std::abs(r.p[n][i]) < mu) {
                EXPECT_EQ(r.lambda[n][i], -r.p[n][i] / mu);
            }
            if (std::abs(r.p[n][i]) <= mu - 1e-8) {
                EXPECT_EQ(r.u[n][i], 0.0);
            }
        }
}

TEST(Optimize, BisectionLineSearchAlsoDescends)
{
    const Case s = coarse_first_example(20, 2, 6);
    const ControlProblem problem(*s.model, s.y0, s.z0, tracking_targets(s.natural, 3), {1.0, 1.0, 0.0, 0.0, 1e-5, 0.0},
                                 {});
    OptimizerConfig cfg;
    cfg.line_search = LineSearchStrategy::Bisection;
    cfg.max_iterations = 10;
    const OptimizerState r = optimize(problem, cfg);
    ASSERT_GE(r.iterations, 1);
    for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LT(r.history[k].objective, r.history[k - 1].objective);
}
