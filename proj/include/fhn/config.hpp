#pragma once

#include "fhn/optimizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace fhn {

enum class TargetMode { Tracking, Terminal };
enum class SweepParameter { None, Vmax, Sparsity, Tikhonov };

inline std::string to_string(TargetMode m) { return m == TargetMode::Tracking ? "tracking" : "terminal"; }

inline TargetMode parse_target_mode(const std::string& s)
{
    if (s == "tracking") return TargetMode::Tracking;
    if (s == "terminal") return TargetMode::Terminal;
    throw std::invalid_argument("unknown target mode '" + s + "'");
}

inline std::string to_string(SweepParameter p)
{
    switch (p) {
    case SweepParameter::None: return "none";
    case SweepParameter::Vmax: return "vmax";
    case SweepParameter::Sparsity: return "mu";
    case SweepParameter::Tikhonov: return "tikhonov";
    }
    return "?";
}

inline SweepParameter parse_sweep_parameter(const std::string& s)
{
    if (s == "none") return SweepParameter::None;
    if (s == "vmax") return SweepParameter::Vmax;
    if (s == "mu") return SweepParameter::Sparsity;
    if (s == "tikhonov") return SweepParameter::Tikhonov;
    throw std::invalid_argument("unknown sweep parameter '" + s + "'");
}

inline std::string to_string(SolverMethod m) { return m == SolverMethod::Direct ? "direct" : "iterative"; }

inline SolverMethod parse_solver_method(const std::string& s)
{
    if (s == "direct") return SolverMethod::Direct;
    if (s == "iterative") return SolverMethod::Iterative;
    throw std::invalid_argument("unknown linear solver '" + s + "'");
}

/// Everything one run needs. Plain data; `validate` checks ranges.
struct OcpConfig {
    struct Experiment {
        std::string preset = "custom";
        std::string output = "out";
    } experiment;

    ChannelGeometry geometry{100.0, 5.0, 200, 10};

    struct Physics {
        double c1 = 9.0, c2 = 0.02, c3 = 5.0, epsilon = 0.1;
        double d1 = 1.0, d2 = 1.0;
        double vmax = 16.0;
    } physics;

    struct Time {
        double final_time = 1.0;
        int steps = 20;
    } time;

    ObjectiveWeights weights{1.0, 1.0, 0.0, 0.0, 1e-5, 0.0};
    ControlBounds bounds{};

    /// y0 = value on start <= x1 <= end, zero elsewhere; z0 = 0.
    struct Initial {
        double pulse_start = 0.0;
        double pulse_end = 0.1;
        double pulse_value = 0.1;
        bool inflow_trace = true; ///< use the y0 profile as inflow data of y
    } initial;

    struct Boundary {
        bool dirichlet_left = false; ///< x1 = 0 face carries Dirichlet conditions
    } boundary;

    struct TargetSpec {
        TargetMode mode = TargetMode::Tracking;
        double time = 0.5; ///< tracking cut-off, or the time of the terminal snapshot
    } targets;

    struct Solver {
        double sigma_interior = 6.0, sigma_boundary = 12.0;
        NewtonConfig newton{};
        SolverMethod linear = SolverMethod::Iterative;
        double linear_tolerance = 1e-11;
        OptimizerConfig optimizer{};
    } solver;

    struct Output {
        std::vector<double> profile_times{0.75};
        bool vtk = true;
    } output;

    struct Sweep {
        SweepParameter parameter = SweepParameter::None;
        std::vector<double> values{};
        double reference = 1e-10; ///< tikhonov sweep reference weight
    } sweep;

    [[nodiscard]] double tau() const { return time.final_time / time.steps; }

    /// Node index of time t; throws unless t is a grid node.
    [[nodiscard]] int node_of(double t) const
    {
        const double r = t / tau();
        const long n = std::lround(r);
        if (std::abs(r - static_cast<double>(n)) > 1e-9 || n < 0 || n > time.steps)
            throw std::invalid_argument("time " + std::to_string(t) + " is not a node of the time grid");
        return static_cast<int>(n);
    }

    void validate() const
    {
        geometry.validate();
        TimeGrid{time.final_time, time.steps}.validate();
        weights.validate();
        bounds.validate();
        solver.newton.validate();
        solver.optimizer.validate();
        if (!(physics.d1 > 0.0) || !(physics.d2 > 0.0))
            throw std::invalid_argument("OcpConfig: diffusion coefficients must be positive");
        if (physics.c1 < 0.0 || physics.c2 < 0.0) throw std::invalid_argument("OcpConfig: c1 and c2 must be non-negative");
        if (!(physics.vmax >= 0.0)) throw std::invalid_argument("OcpConfig: vmax must be non-negative");
        if (!(solver.sigma_interior > 0.0) || !(solver.sigma_boundary > 0.0))
            throw std::invalid_argument("OcpConfig: penalties must be positive");
        if (!(initial.pulse_end >= initial.pulse_start)) throw std::invalid_argument("OcpConfig: empty pulse interval");
        (void)node_of(targets.time);
        for (double t : output.profile_times) (void)node_of(t);
        if (sweep.parameter != SweepParameter::None && sweep.values.empty())
            throw std::invalid_argument("OcpConfig: sweep without values");
        if (sweep.parameter == SweepParameter::Tikhonov && !(sweep.reference > 0.0))
            throw std::invalid_argument("OcpConfig: tikhonov reference must be positive");
        if (experiment.output.empty()) throw std::invalid_argument("OcpConfig: empty output directory");
    }
};

// ---------------------------------------------------------------------------
// text format: `[section]` headers and `key = value` lines, `#` comments.
// Numbers use the shortest representation that parses back to the same double.

namespace config_detail {

inline std::string format_number(double v)
{
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) throw std::invalid_argument("config: NaN is not representable");
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s)
{
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("config: '" + std::string(s) + "' is not a number");
    return v;
}

inline int parse_int(std::string_view s)
{
    int v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw std::invalid_argument("config: '" + std::string(s) + "' is not an integer");
    return v;
}

inline bool parse_bool(std::string_view s)
{
    if (s == "true") return true;
    if (s == "false") return false;
    throw std::invalid_argument("config: '" + std::string(s) + "' is not a boolean");
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string quote(const std::string& s)
{
    if (s.find_first_of("\"\n") != std::string::npos) throw std::invalid_argument("config: unsupported character in string");
    return '"' + s + '"';
}

inline std::string unquote(std::string_view s)
{
    if (s.size() < 2 || s.front() != '"' || s.back() != '"')
        throw std::invalid_argument("config: expected a quoted string, got '" + std::string(s) + "'");
    return std::string(s.substr(1, s.size() - 2));
}

inline std::string format_list(const std::vector<double>& v)
{
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_number(v[i]);
    return out + "]";
}

inline std::vector<double> parse_list(std::string_view s)
{
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw std::invalid_argument("config: expected a list, got '" + std::string(s) + "'");
    s = trim(s.substr(1, s.size() - 2));
    std::vector<double> out;
    while (!s.empty()) {
        const auto comma = s.find(',');
        out.push_back(parse_number(trim(s.substr(0, comma))));
        if (comma == std::string_view::npos) break;
        s = trim(s.substr(comma + 1));
    }
    return out;
}

/// A typed view of one config entry.
struct Field {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(std::string_view)> set;
};

template <class T>
Field number(std::string section, std::string key, T& ref)
{
    if constexpr (std::is_same_v<T, int>) {
        return {std::move(section), std::move(key), [&ref] { return std::to_string(ref); },
                [&ref](std::string_view s) { ref = parse_int(s); }};
    } else {
        return {std::move(section), std::move(key), [&ref] { return format_number(ref); },
                [&ref](std::string_view s) { ref = parse_number(s); }};
    }
}

inline Field boolean(std::string section, std::string key, bool& ref)
{
    return {std::move(section), std::move(key), [&ref] { return std::string(ref ? "true" : "false"); },
            [&ref](std::string_view s) { ref = parse_bool(s); }};
}

inline Field text(std::string section, std::string key, std::string& ref)
{
    return {std::move(section), std::move(key), [&ref] { return quote(ref); },
            [&ref](std::string_view s) { ref = unquote(s); }};
}

template <class E, class Parse>
Field choice(std::string section, std::string key, E& ref, Parse parse)
{
    return {std::move(section), std::move(key), [&ref] { return quote(to_string(ref)); },
            [&ref, parse](std::string_view s) { ref = parse(unquote(s)); }};
}

inline Field list(std::string section, std::string key, std::vector<double>& ref)
{
    return {std::move(section), std::move(key), [&ref] { return format_list(ref); },
            [&ref](std::string_view s) { ref = parse_list(s); }};
}

inline std::vector<Field> fields(OcpConfig& c)
{
    auto& o = c.solver.optimizer;
    return {
        text("experiment", "preset", c.experiment.preset),
        text("experiment", "output", c.experiment.output),
        number("geometry", "length", c.geometry.length),
        number("geometry", "height", c.geometry.height),
        number("geometry", "nx", c.geometry.nx),
        number("geometry", "ny", c.geometry.ny),
        number("physics", "c1", c.physics.c1),
        number("physics", "c2", c.physics.c2),
        number("physics", "c3", c.physics.c3),
        number("physics", "epsilon", c.physics.epsilon),
        number("physics", "d1", c.physics.d1),
        number("physics", "d2", c.physics.d2),
        number("physics", "vmax", c.physics.vmax),
        number("time", "final_time", c.time.final_time),
        number("time", "steps", c.time.steps),
        number("weights", "tracking_y", c.weights.tracking_y),
        number("weights", "tracking_z", c.weights.tracking_z),
        number("weights", "terminal_y", c.weights.terminal_y),
        number("weights", "terminal_z", c.weights.terminal_z),
        number("weights", "tikhonov", c.weights.tikhonov),
        number("weights", "sparsity", c.weights.sparsity),
        number("bounds", "lower", c.bounds.lower),
        number("bounds", "upper", c.bounds.upper),
        number("initial", "pulse_start", c.initial.pulse_start),
        number("initial", "pulse_end", c.initial.pulse_end),
        number("initial", "pulse_value", c.initial.pulse_value),
        boolean("initial", "inflow_trace", c.initial.inflow_trace),
        boolean("boundary", "dirichlet_left", c.boundary.dirichlet_left),
        choice("targets", "mode", c.targets.mode, parse_target_mode),
        number("targets", "time", c.targets.time),
        number("solver", "sigma_interior", c.solver.sigma_interior),
        number("solver", "sigma_boundary", c.solver.sigma_boundary),
        number("solver", "newton_atol", c.solver.newton.absolute_tolerance),
        number("solver", "newton_rtol", c.solver.newton.relative_tolerance),
        number("solver", "newton_max_iterations", c.solver.newton.max_iterations),
        boolean("solver", "newton_damping", c.solver.newton.damping),
        choice("solver", "linear", c.solver.linear, parse_solver_method),
        number("solver", "linear_tolerance", c.solver.linear_tolerance),
        choice("solver", "beta", o.beta, parse_beta_variant),
        choice("solver", "line_search", o.line_search, parse_line_search),
        number("solver", "armijo", o.armijo),
        number("solver", "wolfe", o.wolfe),
        number("solver", "gradient_tolerance", o.gradient_tolerance),
        choice("solver", "gradient_norm", o.gradient_norm, parse_gradient_norm),
        number("solver", "objective_tolerance", o.objective_tolerance),
        number("solver", "max_iterations", o.max_iterations),
        number("solver", "restart_every", o.restart_every),
        number("solver", "initial_step", o.initial_step),
        boolean("solver", "snap_sparsity", o.snap_sparsity),
        number("solver", "snap_tolerance", o.snap_tolerance),
        list("output", "profile_times", c.output.profile_times),
        boolean("output", "vtk", c.output.vtk),
        choice("sweep", "parameter", c.sweep.parameter, parse_sweep_parameter),
        list("sweep", "values", c.sweep.values),
        number("sweep", "reference", c.sweep.reference),
    };
}

} // namespace config_detail

inline std::string serialize_config(const OcpConfig& cfg)
{
    OcpConfig copy = cfg;
    std::string out, section;
    for (const auto& f : config_detail::fields(copy)) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get() + '\n';
    }
    return out;
}

/// Parses the text format on top of `base`; keys absent from the text keep their base value.
inline OcpConfig parse_config(std::string_view text, OcpConfig base = {})
{
    auto table = config_detail::fields(base);
    std::map<std::string, config_detail::Field*> index;
    for (auto& f : table) index[f.section + "." + f.key] = &f;

    std::string section;
    int line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        const auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
        // strip comments outside quotes
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line = line.substr(0, i);
                break;
            }
        }
        line = config_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument(where() + "malformed section header");
            section = std::string(config_detail::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw std::invalid_argument(where() + "expected key = value");
        const std::string key(config_detail::trim(line.substr(0, eq)));
        const auto it = index.find(section + "." + key);
        if (it == index.end()) throw std::invalid_argument(where() + "unknown key '" + section + "." + key + "'");
        try {
            it->second->set(config_detail::trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(where() + e.what());
        }
    }
    return base;
}

inline OcpConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// presets

inline const std::vector<std::string>& preset_names()
{
    static const std::vector<std::string> names{"example1-unconstrained", "example1-box", "example1-sparse",
                                                "example2-terminal",      "example2-sparse", "tikhonov-sweep",
                                                "forward-only"};
    return names;
}

inline bool is_preset(const std::string& name)
{
    const auto& n = preset_names();
    return std::find(n.begin(), n.end(), name) != n.end();
}

namespace config_detail {

/// Traveling wave fed from the inflow face, tracked up to T/2.
inline OcpConfig first_example()
{
    OcpConfig c;
    c.geometry = {100.0, 5.0, 200, 10};
    c.weights = {1.0, 1.0, 0.0, 0.0, 1e-5, 0.0};
    c.initial = {0.0, 0.1, 0.1, true};
    c.targets = {TargetMode::Tracking, 0.5};
    c.output.profile_times = {0.75};
    return c;
}

/// Pulse at x1 in [2, 2.2], terminal targets from the uncontrolled state at T/2.
inline OcpConfig second_example()
{
    OcpConfig c;
    c.geometry = {100.0, 5.0, 800, 40};
    c.weights = {0.0, 0.0, 1.0, 1.0, 1e-5, 0.0};
    c.bounds = {0.0, 0.2};
    c.initial = {2.0, 2.2, 1.0, true};
    c.targets = {TargetMode::Terminal, 0.5};
    c.output.profile_times = {1.0};
    return c;
}

} // namespace config_detail

/// Named experiment. `coarse` halves the first example's resolution, runs the
/// second example at the first example's mesh width and shortens the Tikhonov sweep.
inline OcpConfig preset(const std::string& name, bool coarse = false)
{
    using config_detail::first_example;
    using config_detail::second_example;
    const std::vector<double> speeds{16.0, 32.0, 64.0, 128.0};
    OcpConfig c;
    if (name == "example1-unconstrained") {
        c = first_example();
        c.sweep = {SweepParameter::Vmax, speeds};
    } else if (name == "example1-box") {
        c = first_example();
        c.bounds = {-0.2, 0.0};
        c.sweep = {SweepParameter::Vmax, speeds};
    } else if (name == "example1-sparse") {
        c = first_example();
        c.bounds = {-0.2, 0.0};
        c.physics.vmax = 32.0;
        c.sweep = {SweepParameter::Sparsity, {0.0, 1.0 / 500, 1.0 / 100, 1.0 / 50, 1.0 / 35}};
    } else if (name == "example2-terminal") {
        c = second_example();
        c.sweep = {SweepParameter::Vmax, speeds};
    } else if (name == "example2-sparse") {
        c = second_example();
        c.physics.vmax = 64.0;
        c.sweep = {SweepParameter::Sparsity, {0.0, 1.0 / 2000, 1.0 / 200, 1.0 / 150, 1.0 / 100}};
    } else if (name == "tikhonov-sweep") {
        c = second_example();
        c.physics.vmax = 64.0;
        c.weights.sparsity = 1.0 / 200;
        c.sweep = {SweepParameter::Tikhonov, {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9}, 1e-10};
        if (coarse) c.sweep.values = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
        // thresholding is discontinuous in omega_u and would swamp the O(omega_u) differences
        c.solver.optimizer.snap_sparsity = false;
    } else if (name == "forward-only") {
        c = first_example();
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    if (coarse) {
        if (name.rfind("example1", 0) == 0 || name == "forward-only")
            c.geometry.nx /= 2, c.geometry.ny /= 2;
        else
            c.geometry.nx = 200, c.geometry.ny = 10;
    }
    c.experiment.preset = name;
    c.experiment.output = "out/" + name;
    return c;
}

/// Sets vmax; a vmax sweep collapses to that single value.
inline void override_vmax(OcpConfig& c, double vmax)
{
    c.physics.vmax = vmax;
    if (c.sweep.parameter == SweepParameter::Vmax) c.sweep.values = {vmax};
}

/// Sets mu; a mu sweep collapses to that single value.
inline void override_sparsity(OcpConfig& c, double mu)
{
    c.weights.sparsity = mu;
    if (c.sweep.parameter == SweepParameter::Sparsity) c.sweep.values = {mu};
}

} // namespace fhn
