#pragma once

#include "fhn/config.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace fhn {

/// Model, initial data and targets of one configuration.
struct ExperimentSetup {
    OcpConfig config;
    std::unique_ptr<FhnModel> model;
    Vector y0, z0;
    Trajectory natural;
    Targets targets;

    [[nodiscard]] ControlProblem problem() const
    {
        return ControlProblem(*model, y0, z0, targets, config.weights, config.bounds);
    }
};

inline BoundaryFunction pulse_function(const OcpConfig& c)
{
    const double lo = c.initial.pulse_start, hi = c.initial.pulse_end, v = c.initial.pulse_value;
    return [lo, hi, v](const Point& x) { return x[0] >= lo && x[0] <= hi ? v : 0.0; };
}

inline FhnProblem make_problem(const OcpConfig& c)
{
    c.validate();
    const auto velocity = VelocityField::from_vmax(c.physics.vmax, c.geometry.height);
    const unsigned dirichlet = c.boundary.dirichlet_left ? SideLeft : SideNone;
    auto mesh = std::make_shared<const Mesh>(
        classify_edges(build_channel_mesh(c.geometry), sides_predicate(dirichlet, c.geometry), velocity));
    FhnProblem p;
    p.space = std::make_shared<const DgSpace>(std::move(mesh));
    p.reaction = {c.physics.c1, c.physics.c2, c.physics.c3, c.physics.epsilon};
    p.sipg_y = {c.solver.sigma_interior, c.solver.sigma_boundary, c.physics.d1, velocity};
    p.sipg_z = {c.solver.sigma_interior, c.solver.sigma_boundary, c.physics.d2, velocity};
    if (c.initial.inflow_trace) p.data_y = pulse_function(c);
    p.grid = {c.time.final_time, c.time.steps};
    p.newton = c.solver.newton;
    p.linear.method = c.solver.linear;
    p.linear.tolerance = c.solver.linear_tolerance;
    return p;
}

/// Builds the model and the natural (u = 0) trajectory the targets are cut from.
inline ExperimentSetup prepare(const OcpConfig& c)
{
    ExperimentSetup s;
    s.config = c;
    FhnProblem p = make_problem(c);
    s.y0 = l2_project(p.space, pulse_function(c)).coeffs;
    s.z0.assign(s.y0.size(), 0.0);
    s.model = std::make_unique<FhnModel>(std::move(p));
    s.natural = s.model->forward({}, s.y0, s.z0);
    const int node = c.node_of(c.targets.time);
    s.targets = c.targets.mode == TargetMode::Tracking ? tracking_targets(s.natural, node)
                                                       : terminal_targets(s.natural, node);
    return s;
}

/// Copy of `c` with the sweep parameter set to `value`.
inline OcpConfig entry_config(const OcpConfig& c, double value)
{
    OcpConfig e = c;
    switch (c.sweep.parameter) {
    case SweepParameter::None: break;
    case SweepParameter::Vmax: e.physics.vmax = value; break;
    case SweepParameter::Sparsity: e.weights.sparsity = value; break;
    case SweepParameter::Tikhonov: e.weights.tikhonov = value; break;
    }
    return e;
}

struct RunResult {
    double parameter = 0.0;
    OptimizerState state;
};

// ---------------------------------------------------------------------------
// norms over the time grid (right endpoint rule, nodes 1..N)

inline double l2q_distance(const SparseMatrix& mass, double tau, const std::vector<Vector>& a,
                           const std::vector<Vector>& b, std::size_t first = 0)
{
    if (a.size() != b.size()) throw std::invalid_argument("l2q_distance: size mismatch");
    double sum = 0.0;
    for (std::size_t n = first; n < a.size(); ++n) {
        Vector d = a[n];
        axpy(-1.0, b[n], d);
        sum += tau * dot(d, mass * d);
    }
    return std::sqrt(std::max(0.0, sum));
}

inline double linf_distance(const std::vector<Vector>& a, const std::vector<Vector>& b, std::size_t first = 0)
{
    if (a.size() != b.size()) throw std::invalid_argument("linf_distance: size mismatch");
    double m = 0.0;
    for (std::size_t n = first; n < a.size(); ++n)
        for (std::size_t i = 0; i < a[n].size(); ++i) m = std::max(m, std::abs(a[n][i] - b[n][i]));
    return m;
}

// ---------------------------------------------------------------------------
// output files

inline std::string format_value(double v) { return config_detail::format_number(v); }

inline void write_summary_header(std::ostream& os)
{
    os << "preset,parameter,value,J,I,mu_j,iterations,line_searches,newton_steps,status\n";
}

inline void write_summary_row(std::ostream& os, const OcpConfig& c, const RunResult& r)
{
    const auto& s = r.state;
    os << c.experiment.preset << ',' << to_string(c.sweep.parameter) << ',' << format_value(r.parameter) << ','
       << format_value(s.value.total) << ',' << format_value(s.value.smooth) << ','
       << format_value(s.value.sparse_part(c.weights)) << ',' << s.iterations << ',' << s.line_searches << ','
       << s.newton_steps << ',' << to_string(s.status) << '\n';
}

inline void write_iterations_header(std::ostream& os)
{
    os << "value,k,J,I,mu_j,gradient_norm,step,line_searches,newton_steps\n";
}

inline void write_iteration_row(std::ostream& os, double value, const IterationRecord& r)
{
    os << format_value(value) << ',' << r.k << ',' << format_value(r.objective) << ',' << format_value(r.smooth) << ','
       << format_value(r.sparse) << ',' << format_value(r.gradient_norm) << ',' << format_value(r.step) << ','
       << r.line_searches << ',' << r.newton_steps << '\n';
}

/// Average of the element values meeting at x (one value inside an element,
/// the trace average on edges and vertices).
inline double sample(const DgField& f, const Point& x)
{
    const auto elements = f.space->mesh().elements_containing(x);
    if (elements.empty()) throw std::out_of_range("sample: point outside the mesh");
    double sum = 0.0;
    for (int k : elements) sum += eval_physical(f, k, x);
    return sum / static_cast<double>(elements.size());
}

/// x1, y, z, u along x2 = H/2 at the cell centres in x1.
inline void write_profile_csv(std::ostream& os, const Trajectory& state, const Control& u, int node)
{
    const auto& space = state.space;
    const auto& g = space->mesh().geometry;
    const DgField y = state.first_field(node);
    const DgField z = state.second_field(node);
    const DgField c = node > 0 && !u.empty() ? DgField(space, u.at(node - 1)) : DgField(space);
    const double dx = g.length / g.nx;
    os << "x1,y,z,u\n";
    for (int i = 0; i < g.nx; ++i) {
        const Point x{(i + 0.5) * dx, 0.5 * g.height};
        os << format_value(x[0]) << ',' << format_value(sample(y, x)) << ',' << format_value(sample(z, x)) << ','
           << format_value(sample(c, x)) << '\n';
    }
}

inline void write_fields(const std::filesystem::path& dir, const OcpConfig& c, const Trajectory& state,
                         const Control& u)
{
    std::filesystem::create_directories(dir);
    for (double t : c.output.profile_times) {
        const int node = c.node_of(t);
        {
            std::ofstream os(dir / ("profile_t" + format_value(t) + ".csv"));
            write_profile_csv(os, state, u, node);
        }
        if (!c.output.vtk) continue;
        const DgField y = state.first_field(node);
        const DgField z = state.second_field(node);
        const DgField uc = node > 0 && !u.empty() ? DgField(state.space, u.at(node - 1)) : DgField(state.space);
        for (const auto& [name, f] : {std::pair{"y", &y}, std::pair{"z", &z}, std::pair{"u", &uc}}) {
            std::ofstream os(dir / ("field_" + std::string(name) + "_" + std::to_string(node) + ".vtk"));
            write_field_vtk(os, {{name, f}});
        }
    }
}

// ---------------------------------------------------------------------------
// runs

/// Values visited by a run: the sweep values, or the configured value of the
/// sweep parameter when there is no sweep.
inline std::vector<double> entry_values(const OcpConfig& c)
{
    if (c.sweep.parameter == SweepParameter::None) return {c.physics.vmax};
    return c.sweep.values;
}

inline std::string entry_directory(const OcpConfig& c, double value)
{
    return to_string(c.sweep.parameter) + "_" + format_value(value);
}

/// Optimizes one configuration. The forward-only preset skips the optimizer
/// and reports the uncontrolled trajectory.
inline RunResult run_entry(const OcpConfig& c, double parameter, const IterationCallback& on_iteration = {})
{
    const ExperimentSetup setup = prepare(c);
    const ControlProblem problem = setup.problem();
    RunResult r;
    r.parameter = parameter;
    if (c.experiment.preset == "forward-only") {
        OptimizerConfig cfg = c.solver.optimizer;
        cfg.max_iterations = 0;
        r.state = optimize(problem, cfg, {}, on_iteration);
    } else {
        r.state = optimize(problem, c.solver.optimizer, {}, on_iteration);
    }
    return r;
}

struct ExperimentReport {
    std::vector<RunResult> runs;
};

inline void write_tikhonov_table(std::ostream& os, const OcpConfig& c, const std::vector<RunResult>& runs,
                                 const RunResult& ref, const ExperimentSetup& setup);

/// Runs every entry of the configured sweep and writes summary.csv,
/// iterations.csv, profiles and VTK snapshots under the output directory.
/// Entries go to subdirectories when there is more than one.
inline ExperimentReport run_experiment(const OcpConfig& c, std::ostream* log = nullptr)
{
    c.validate();
    const std::filesystem::path out = c.experiment.output;
    std::filesystem::create_directories(out);
    std::ofstream summary(out / "summary.csv");
    std::ofstream iterations(out / "iterations.csv");
    write_summary_header(summary);
    write_iterations_header(iterations);

    std::vector<double> values = entry_values(c);
    const bool tikhonov = c.sweep.parameter == SweepParameter::Tikhonov;
    if (tikhonov) values.push_back(c.sweep.reference);

    ExperimentReport report;
    for (double v : values) {
        const OcpConfig e = entry_config(c, v);
        if (log) *log << c.experiment.preset << ": " << to_string(c.sweep.parameter) << " = " << format_value(v) << '\n';
        RunResult r = run_entry(e, v, [&](const IterationRecord& rec) {
            write_iteration_row(iterations, v, rec);
            if (log) {
                char line[160];
                std::snprintf(line, sizeof line, "  k=%4d  J=%.6e  |g|=%.3e  step=%.3e\n", rec.k, rec.objective,
                              rec.gradient_norm, rec.step);
                *log << line;
            }
        });
        write_summary_row(summary, e, r);
        summary.flush();
        const bool single = values.size() == 1;
        if (!c.output.profile_times.empty()) {
            const Trajectory& state = r.state.state;
            write_fields(single ? out : out / entry_directory(c, v), e, state, r.state.u);
        }
        report.runs.push_back(std::move(r));
    }

    if (tikhonov) {
        const RunResult ref = std::move(report.runs.back());
        report.runs.pop_back();
        const ExperimentSetup setup = prepare(entry_config(c, c.sweep.reference));
        std::ofstream sweep(out / "sweep.csv");
        write_tikhonov_table(sweep, c, report.runs, ref, setup);
        report.runs.push_back(ref);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Tikhonov sweep

struct SweepRow {
    double omega = 0.0;
    double y_l2q = 0.0, z_l2q = 0.0, u_l2q = 0.0;
    double y_linfq = 0.0, z_linfq = 0.0, u_linfq = 0.0;
    double y_target_l2 = 0.0, z_target_l2 = 0.0, y_target_linf = 0.0, z_target_linf = 0.0;
};

/// Distances of one solution to the reference solution over Q and to the
/// terminal targets at t = T.
inline SweepRow sweep_row(const RunResult& r, const RunResult& ref, const ExperimentSetup& setup)
{
    const SparseMatrix& m = setup.model->mass();
    const double tau = setup.model->grid().tau();
    const auto& s = r.state.state;
    const auto& sr = ref.state.state;
    SweepRow row;
    row.omega = r.parameter;
    row.y_l2q = l2q_distance(m, tau, s.first, sr.first, 1);
    row.z_l2q = l2q_distance(m, tau, s.second, sr.second, 1);
    row.u_l2q = l2q_distance(m, tau, r.state.u, ref.state.u);
    row.y_linfq = linf_distance(s.first, sr.first, 1);
    row.z_linfq = linf_distance(s.second, sr.second, 1);
    row.u_linfq = linf_distance(r.state.u, ref.state.u);
    const std::vector<Vector> y_end{s.first.back()}, z_end{s.second.back()};
    const std::vector<Vector> y_target{setup.targets.terminal_y}, z_target{setup.targets.terminal_z};
    if (!setup.targets.terminal_y.empty()) {
        row.y_target_l2 = l2q_distance(m, 1.0, y_end, y_target);
        row.y_target_linf = linf_distance(y_end, y_target);
    }
    if (!setup.targets.terminal_z.empty()) {
        row.z_target_l2 = l2q_distance(m, 1.0, z_end, z_target);
        row.z_target_linf = linf_distance(z_end, z_target);
    }
    return row;
}

inline void write_tikhonov_table(std::ostream& os, const OcpConfig&, const std::vector<RunResult>& runs,
                                 const RunResult& ref, const ExperimentSetup& setup)
{
    os << "omega,y_l2q,z_l2q,u_l2q,y_linfq,z_linfq,u_linfq,y_target_l2,z_target_l2,y_target_linf,z_target_linf\n";
    std::vector<const RunResult*> all;
    for (const auto& r : runs) all.push_back(&r);
    all.push_back(&ref);
    for (const RunResult* r : all) {
        const SweepRow s = sweep_row(*r, ref, setup);
        os << format_value(s.omega) << ',' << format_value(s.y_l2q) << ',' << format_value(s.z_l2q) << ','
           << format_value(s.u_l2q) << ',' << format_value(s.y_linfq) << ',' << format_value(s.z_linfq) << ','
           << format_value(s.u_linfq) << ',' << format_value(s.y_target_l2) << ',' << format_value(s.z_target_l2)
           << ',' << format_value(s.y_target_linf) << ',' << format_value(s.z_target_linf) << '\n';
    }
}

/// Sweep table of a tikhonov configuration: one row per weight, reference last.
inline std::vector<SweepRow> run_tikhonov_sweep(const OcpConfig& c, std::ostream* log = nullptr)
{
    if (c.sweep.parameter != SweepParameter::Tikhonov)
        throw std::invalid_argument("run_tikhonov_sweep: configuration does not sweep the tikhonov weight");
    const ExperimentReport report = run_experiment(c, log);
    const RunResult& ref = report.runs.back();
    const ExperimentSetup setup = prepare(entry_config(c, c.sweep.reference));
    std::vector<SweepRow> rows;
    for (const auto& r : report.runs) rows.push_back(sweep_row(r, ref, setup));
    return rows;
}

} // namespace fhn
