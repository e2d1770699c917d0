// collective: command-line front end.
//
// Every command resolves one JSON config (defaults < file < COLLECTIVE_* env
// < flags < --set), writes its outputs under --out, and leaves a manifest.json
// whose "config" block reproduces the run: `collective <cmd> --config
// out/manifest.json`.
//
// Exit codes: 0 ok, 2 config error, 3 numeric divergence, 4 structural absence.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fftw3.h>
#include <json.hpp>

#include "collective/control.hpp"
#include "collective/dynamics.hpp"
#include "collective/equilibria.hpp"
#include "collective/hjb.hpp"
#include "collective/hst.hpp"
#include "collective/models.hpp"
#include "collective/rom.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace collective;

namespace {

constexpr const char* kVersion = "0.1.0";

json model_defaults(const std::string& id) { return {{"id", id}, {"params", json::object()}}; }

json reward_defaults(double center, double width) {
    return {{"kind", "gaussian"}, {"center", center}, {"width", width}, {"height", 1.0}, {"lo", -0.5}, {"hi", 0.5}};
}

/// Defaults per command. Keys outside this tree are rejected, except under
/// objects that are empty here (free-form maps such as model params).
json defaults_for(const std::string& cmd) {
    json c = {{"seed", 0}, {"out", "out"}, {"threads", 1}};
    if (cmd == "simulate") {
        c["model"] = model_defaults("pendulum");
        c["simulate"] = {{"q0", 1.0}, {"p0", 0.0}, {"tau0", 0.0}, {"dt", 1e-3}, {"n_steps", 10000},
                         {"output_stride", 10}, {"scheme", "leapfrog"},
                         {"policy", {{"nu", 0.0}, {"drive_a", 0.0}, {"drive_omega", 1.0}}}};
    } else if (cmd == "equilibria" || cmd == "separatrix") {
        c["model"] = model_defaults("pendulum");
        c["box"] = json::array();  // [q_min, q_max, p_min, p_max]; empty = per-model default
        c["grid_n"] = 16;
        if (cmd == "separatrix") c["ds"] = 1e-3;
    } else if (cmd == "orbit") {
        c["model"] = model_defaults("pendulum");
        c["orbit"] = {{"q_inside", nullptr}, {"E_min", nullptr}, {"E_max", nullptr}, {"n", 20}};
    } else if (cmd == "control") {
        c["model"] = model_defaults("pendulum");
        c["control"] = {
            {"kind", "stimulus"},
            {"q0", 0.5},
            {"p0", 0.0},
            {"delta", 1e-3},
            {"ramp_time", 20.0},
            {"dt", 1e-2},
            {"horizon", 200.0},
            {"radius", 0.1},
            {"nu_grid", {0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1}},
            {"reward", reward_defaults(std::numbers::pi, 0.5)},
            {"a", 0.1},
            {"theta0", 0.01},
            {"duration", 200.0},
            {"omega_lo", 5.0},
            {"omega_hi", 40.0},
            {"omega_grid", {5.0, 10.0, 12.5, 15.0, 17.5, 20.0, 30.0, 40.0}},
            {"rel_tol", 1e-3},
            {"steps_per_drive_period", 40}};
    } else if (cmd == "hjb") {
        c["model"] = model_defaults("pendulum");
        c["hjb"] = {{"mode", "characteristics"},
                    {"E", 0.0},
                    {"q_inside", 0.0},
                    {"grid_n", 4096},
                    {"nu", {0.5}},
                    {"q_min", -2.0},
                    {"q_max", 2.0},
                    {"tol", 1e-12},
                    {"max_iter", 100000},
                    {"reward", reward_defaults(1.0, 1.0)},
                    {"probes", json::array()}};
    } else if (cmd == "hst") {
        c["hst"] = {{"input", "data/tone.csv"}, {"J", 6},           {"m_max", 2},      {"xi0", 0.75 * std::numbers::pi},
                    {"sigma", 0.5},            {"pooling", "lowpass"}, {"normalize", true}};
    } else if (cmd == "rom") {
        c["seed"] = 7;
        c["rom"] = {{"action", "train"},
                    {"dataset", {{"n_traj", 200}, {"E_lo", -0.99}, {"E_hi", -0.5}, {"duration", 16.0},
                                 {"spacing", 0.05}, {"seed", 11}}},
                    {"trajectories", json::array()},
                    {"train", {{"epochs", 2000}, {"learning_rate", 1e-3}, {"final_learning_rate", 1e-4},
                               {"batch_size", 64}, {"pairs_per_trajectory", 4}, {"restarts", 3}, {"w_recon", 1.0},
                               {"w_pred", 1.0}, {"taus", {0.5, 1.0, 2.0, 4.0}}}},
                    {"model_path", ""},
                    {"input", ""},
                    {"tau", 0.0},
                    {"batch", 8}};
    }
    return c;
}

void check_keys(const json& given, const json& known, const std::string& where) {
    if (!given.is_object() || !known.is_object() || known.empty()) return;
    for (auto it = given.begin(); it != given.end(); ++it) {
        if (!known.contains(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
        check_keys(it.value(), known.at(it.key()), where + it.key() + ".");
    }
}

void merge(json& base, const json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object() &&
            !base[it.key()].empty())
            merge(base[it.key()], it.value());
        else
            base[it.key()] = it.value();
    }
}

json parse_scalar(const std::string& s) {
    try {
        return json::parse(s);
    } catch (const json::exception&) {
        return s;
    }
}

void set_path(json& c, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + assignment + "'");
    json::json_pointer ptr("/" + std::regex_replace(assignment.substr(0, eq), std::regex("\\."), "/"));
    c[ptr] = parse_scalar(assignment.substr(eq + 1));
}

struct Globals {
    std::string config_path;
    std::optional<long long> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    std::optional<std::string> model;
    std::vector<std::string> sets;
};

/// Builds the effective config for `cmd`.
json resolve_config(const std::string& cmd, const Globals& g) {
    json c = defaults_for(cmd);
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw ConfigError("cannot read config file " + g.config_path);
        json file;
        try {
            in >> file;
        } catch (const json::exception& e) {
            throw ConfigError("config file " + g.config_path + " is not valid JSON: " + e.what());
        }
        if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
        // a manifest from an earlier run carries the exact config under "config"
        if (file.contains("config") && file.contains("command")) {
            if (file["command"] != cmd)
                throw ConfigError("manifest was written by '" + file["command"].get<std::string>() + "', not '" + cmd + "'");
            file = file["config"];
        }
        check_keys(file, c, "");
        merge(c, file);
    }
    if (g.seed) c["seed"] = *g.seed;
    if (g.out) c["out"] = *g.out;
    if (g.threads) c["threads"] = *g.threads;
    if (g.model) {
        if (!c.contains("model")) throw ConfigError("--model does not apply to '" + cmd + "'");
        c["model"]["id"] = *g.model;
    }
    for (const auto& s : g.sets) set_path(c, s);
    check_keys(c, defaults_for(cmd), "");
    if (!c["seed"].is_number_integer() || c["seed"].get<long long>() < 0) throw ConfigError("seed must be a non-negative integer");
    if (!c["threads"].is_number_integer() || c["threads"].get<int>() < 1) throw ConfigError("threads must be >= 1");
    return c;
}

// -- config accessors that turn json type errors into config errors --

template <class T>
T get(const json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

std::optional<double> get_opt(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return get<double>(j, key);
}

ModelSpec model_from(const json& c) {
    const json& m = c.at("model");
    std::map<std::string, double> params;
    for (auto it = m.at("params").begin(); it != m.at("params").end(); ++it) {
        if (!it.value().is_number()) throw ConfigError("model parameter '" + it.key() + "' must be a number");
        params[it.key()] = it.value().get<double>();
    }
    auto model = make_model(get<std::string>(m, "id"), params);
    return model;
}

Box default_box(const ModelSpec& m) {
    if (m.q_period) return {-1.0, *m.q_period - 1.0, -2.0, 2.0};
    return {-2.5, 2.5, -2.0, 2.0};
}

Box box_from(const json& c, const ModelSpec& m) {
    const auto v = get<std::vector<double>>(c, "box");
    if (v.empty()) return default_box(m);
    if (v.size() != 4) throw ConfigError("box must be [q_min, q_max, p_min, p_max]");
    return {v[0], v[1], v[2], v[3]};
}

Reward reward_from(const json& r) {
    const auto kind = get<std::string>(r, "kind");
    const double height = get<double>(r, "height");
    if (kind == "constant") return [height](double) { return height; };
    if (kind == "gaussian") {
        const double c = get<double>(r, "center"), w = get<double>(r, "width");
        if (!(w > 0.0)) throw ConfigError("reward width must be > 0");
        return [=](double q) { return height * std::exp(-((q - c) / w) * ((q - c) / w)); };
    }
    if (kind == "indicator") {
        const double lo = get<double>(r, "lo"), hi = get<double>(r, "hi");
        if (!(hi > lo)) throw ConfigError("reward indicator needs hi > lo");
        return [=](double q) { return q >= lo && q <= hi ? height : 0.0; };
    }
    throw ConfigError("unknown reward kind '" + kind + "'");
}

// -- output --

class Run {
public:
    Run(std::string command, json config) : command_(std::move(command)), config_(std::move(config)) {
        dir_ = config_.at("out").get<std::string>();
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) throw ConfigError("output directory '" + dir_.string() + "' is not writable");
        start_ = std::chrono::steady_clock::now();
    }

    std::uint64_t seed() const { return config_.at("seed").get<std::uint64_t>(); }
    int threads() const { return config_.at("threads").get<int>(); }
    const json& config() const { return config_; }

    std::ofstream open(const std::string& name) {
        std::ofstream os(dir_ / name);
        if (!os) throw ConfigError("cannot write " + (dir_ / name).string());
        os << std::setprecision(17);
        files_.push_back(name);
        return os;
    }
    fs::path path(const std::string& name) {
        files_.push_back(name);
        return dir_ / name;
    }

    /// JSON with the seed and config echoed in.
    void write_json(const std::string& name, json j) {
        j["seed"] = seed();
        auto os = open(name);
        os << j.dump(2) << '\n';
    }

    void finish() {
        json m;
        m["command"] = command_;
        m["config"] = config_;
        m["seed"] = seed();
        m["outputs"] = files_;
        m["versions"] = {{"collective", kVersion},
                         {"compiler", __VERSION__},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"fftw", std::string(fftw_version)}};
        m["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        std::ofstream os(dir_ / "manifest.json");
        if (!os) throw ConfigError("cannot write manifest");
        os << m.dump(2) << '\n';
    }

private:
    std::string command_;
    json config_;
    fs::path dir_;
    std::vector<std::string> files_;
    std::chrono::steady_clock::time_point start_;
};

json eq_json(const Equilibrium& e) {
    return {{"q", e.q},
            {"p", e.p},
            {"kind", to_string(e.kind)},
            {"energy", e.energy},
            {"eigenvalues", {{e.eigenvalues[0].real(), e.eigenvalues[0].imag()}, {e.eigenvalues[1].real(), e.eigenvalues[1].imag()}}}};
}

std::vector<PhaseState> read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read trajectory " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("tau,q,p", 0) != 0) throw ConfigError(path + ": expected header starting with tau,q,p");
    std::vector<PhaseState> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        double v[3];
        for (double& x : v) {
            if (!std::getline(ss, cell, ',')) throw ConfigError(path + ": short row");
            try {
                std::size_t used = 0;
                x = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ConfigError(path + ": bad number '" + cell + "'");
            }
        }
        out.push_back({v[1], v[2], v[0]});
    }
    if (out.empty()) throw ConfigError(path + ": no samples");
    return out;
}

ComplexSignal read_signal_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read signal " + path);
    std::string line;
    std::getline(in, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    int cols;
    if (line == "x,re")
        cols = 2;
    else if (line == "x,re,im")
        cols = 3;
    else
        throw ConfigError(path + ": header must be x,re or x,re,im");
    std::vector<double> xs;
    ComplexSignal sig;
    long row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> v;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw ConfigError(path + ": row " + std::to_string(row) + ": bad number '" + cell + "'");
            }
        }
        if (static_cast<int>(v.size()) != cols) throw ConfigError(path + ": row " + std::to_string(row) + " has the wrong column count");
        xs.push_back(v[0]);
        sig.samples.emplace_back(v[1], cols == 3 ? v[2] : 0.0);
    }
    if (xs.size() >= 2) sig.spacing = xs[1] - xs[0];
    sig.validate();
    return sig;
}

// ---------------------------------------------------------------------------
// commands

void cmd_simulate(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const json& s = c.at("simulate");
    IntegratorConfig ic;
    ic.dt = get<double>(s, "dt");
    ic.n_steps = get<long>(s, "n_steps");
    ic.output_stride = get<long>(s, "output_stride");
    ic.scheme = scheme_from_string(get<std::string>(s, "scheme"));
    const json& pj = s.at("policy");
    ControlPolicy policy;
    if (const double nu = get<double>(pj, "nu"); nu != 0.0) policy.terms.push_back(Viscous{nu});
    if (const double a = get<double>(pj, "drive_a"); a != 0.0)
        policy.terms.push_back(Ponderomotive{a, get<double>(pj, "drive_omega")});
    const PhaseState s0{get<double>(s, "q0"), get<double>(s, "p0"), get<double>(s, "tau0")};
    const Trajectory traj = integrate(model, s0, ic, policy.empty() ? nullptr : &policy, run.seed());
    {
        auto os = run.open("trajectory.csv");
        write_trajectory_csv(os, traj, model);
    }
    const double E0 = energy(model, traj.samples.front()), E1 = energy(model, traj.samples.back());
    run.write_json("summary.json", {{"model", model.id},
                                    {"scheme", to_string(effective_scheme(model, ic, policy.empty() ? nullptr : &policy))},
                                    {"samples", traj.samples.size()},
                                    {"energy_initial", E0},
                                    {"energy_final", E1},
                                    {"energy_drift", E1 - E0}});
}

void cmd_equilibria(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const Box box = box_from(c, model);
    const auto eqs = find_equilibria(model, box, get<int>(c, "grid_n"));
    json list = json::array();
    for (const auto& e : eqs) list.push_back(eq_json(e));
    run.write_json("equilibria.json",
                   {{"model", model.id}, {"box", {box.q_min, box.q_max, box.p_min, box.p_max}}, {"equilibria", list}});
}

void cmd_separatrix(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const Box box = box_from(c, model);
    std::vector<Equilibrium> xps;
    for (const auto& e : find_equilibria(model, box, get<int>(c, "grid_n")))
        if (e.kind == EquilibriumKind::x_point) xps.push_back(e);
    if (xps.empty()) throw StructuralAbsenceError("no x-point in the search box for model '" + model.id + "'");
    auto os = run.open("separatrix.csv");
    os << "xpoint,branch,index,q,p\n";
    json list = json::array();
    const Box trace_box{box.q_min - 1.0, box.q_max + 1.0, box.p_min - 1.0, box.p_max + 1.0};
    for (std::size_t k = 0; k < xps.size(); ++k) {
        const auto info = trace_separatrix(model, xps[k], get<double>(c, "ds"), trace_box);
        for (std::size_t b = 0; b < info.branches.size(); ++b)
            for (std::size_t i = 0; i < info.branches[b].size(); ++i)
                os << k << ',' << info.branch_names[b] << ',' << i << ',' << info.branches[b][i][0] << ','
                   << info.branches[b][i][1] << '\n';
        json x = eq_json(xps[k]);
        x["growth_rate"] = xps[k].growth_rate();
        list.push_back(x);
    }
    run.write_json("separatrix.json", {{"model", model.id}, {"xpoints", list}});
}

void cmd_orbit(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const json& o = c.at("orbit");
    const double q_inside = get_opt(o, "q_inside").value_or(model.id == "double_well" ? 1.0 : 0.0);
    const BasinInfo basin = find_basin(model, q_inside);
    const int n = get<int>(o, "n");
    if (n < 1) throw ConfigError("orbit.n must be >= 1");
    const double top = std::isfinite(basin.top()) ? basin.top() : basin.V_min + 2.0;
    const double E_lo = get_opt(o, "E_min").value_or(basin.V_min + (top - basin.V_min) / (n + 1));
    const double E_hi = get_opt(o, "E_max").value_or(basin.V_min + (top - basin.V_min) * n / (n + 1));
    if (!(E_lo > basin.V_min) || !(E_hi < basin.top()) || E_hi < E_lo)
        throw ConfigError("orbit energies must lie strictly between the well bottom and the barrier");
    auto os = run.open("orbit.csv");
    os << "E,J,period,omega_Q,omega_dEdJ,effective_mass\n";
    for (int k = 0; k < n; ++k) {
        const double E = n == 1 ? E_lo : E_lo + (E_hi - E_lo) * k / (n - 1);
        const auto s = orbit_summary(model, basin, E);
        os << s.E << ',' << s.J << ',' << s.period << ',' << s.omega_Q << ',' << s.omega_dEdJ << ','
           << effective_mass(s.omega_Q) << '\n';
    }
    run.write_json("orbit.json", {{"model", model.id},
                                  {"q_inside", q_inside},
                                  {"V_min", basin.V_min},
                                  {"barrier", std::isfinite(basin.top()) ? json(basin.top()) : json(nullptr)}});
}

Equilibrium nearest_xpoint(const ModelSpec& model, const PhaseState& s0) {
    const Box box{s0.q - 4.0, s0.q + 4.0, s0.p - 2.0, s0.p + 2.0};
    std::optional<Equilibrium> best;
    for (const auto& e : find_equilibria(model, box, 16))
        if (e.kind == EquilibriumKind::x_point &&
            (!best || std::hypot(e.q - s0.q, e.p - s0.p) < std::hypot(best->q - s0.q, best->p - s0.p)))
            best = e;
    if (!best) throw StructuralAbsenceError("no x-point near the initial state");
    return *best;
}

void cmd_control(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const json& k = c.at("control");
    const auto kind = get<std::string>(k, "kind");
    const PhaseState s0{get<double>(k, "q0"), get<double>(k, "p0"), 0.0};

    if (kind == "stimulus") {
        const double delta = get<double>(k, "delta");
        if (!(delta > 0.0)) throw ConfigError("control.delta must be > 0");
        SeparatrixInfo sep;
        sep.xpoint = nearest_xpoint(model, s0);
        sep.E_s = sep.xpoint.energy;
        const double dt = get<double>(k, "dt");
        const auto plan = plan_stimulus(model, s0, sep, delta, get<double>(k, "ramp_time"), dt);
        IntegratorConfig ic{dt, std::lround(get<double>(k, "horizon") / dt), 1, Scheme::rk4};
        const auto traj = integrate(model, s0, ic, &plan.policy, run.seed());
        {
            auto os = run.open("stimulus.csv");
            write_trajectory_csv(os, traj, model);
        }
        const auto dw = dwell_time(traj, sep.xpoint, get<double>(k, "radius"));
        run.write_json("summary.json", {{"kind", kind},
                                        {"amplitude", plan.stimulus.amplitude},
                                        {"initial_energy", plan.initial_energy},
                                        {"target_energy", plan.target_energy},
                                        {"final_energy", plan.final_energy},
                                        {"delta_P", plan.delta_P},
                                        {"delta_J", plan.delta_J},
                                        {"dwell_time", dw.dwell_time},
                                        {"xpoint", eq_json(sep.xpoint)}});
    } else if (kind == "viscosity") {
        ViscosityScenario sc;
        sc.s0 = s0;
        sc.xpoint = nearest_xpoint(model, s0);
        sc.E_s = sc.xpoint.energy;
        sc.delta = get<double>(k, "delta");
        sc.ramp_time = get<double>(k, "ramp_time");
        sc.horizon = get<double>(k, "horizon");
        sc.dt = get<double>(k, "dt");
        sc.radius = get<double>(k, "radius");
        sc.reward = reward_from(k.at("reward"));
        const auto scan = viscosity_scan(model, get<std::vector<double>>(k, "nu_grid"), sc, run.threads());
        auto os = run.open("viscosity.csv");
        os << "nu,dwell_time,value,value_ratio,escaped\n";
        for (const auto& r : scan.rows)
            os << r.nu << ',' << r.dwell_time << ',' << r.V << ',' << r.ratio << ',' << (r.escaped ? 1 : 0) << '\n';
        run.write_json("summary.json", {{"kind", kind},
                                        {"amplitude", scan.plan.stimulus.amplitude},
                                        {"e_folding_time", scan.e_folding_time},
                                        {"critical_nu", scan.critical_nu ? json(*scan.critical_nu) : json(nullptr)},
                                        {"final_value_ratio", scan.rows.back().ratio},
                                        {"xpoint", eq_json(sc.xpoint)}});
    } else if (kind == "kapitza") {
        if (model.id != "kapitza") throw ConfigError("control.kind=kapitza needs model.id=kapitza");
        const double a = get<double>(k, "a");
        const PhaseState th0{get<double>(k, "theta0"), 0.0, 0.0};
        PonderomotiveOptions opt;
        opt.radius = get<double>(k, "radius");
        opt.steps_per_drive_period = get<int>(k, "steps_per_drive_period");
        opt.output_stride = 1L << 30;
        const double duration = get<double>(k, "duration");
        const auto grid = get<std::vector<double>>(k, "omega_grid");
        std::vector<PonderomotiveReport> reps(grid.size());
        detail::parallel_for(grid.size(), run.threads(), [&](std::size_t i) {
            reps[i] = run_ponderomotive(model, Ponderomotive{a, grid[i]}, th0, duration, opt);
        });
        {
            auto os = run.open("kapitza.csv");
            os << "omega,dwell_time,escaped,secular_frequency,predicted_frequency\n";
            for (std::size_t i = 0; i < grid.size(); ++i)
                os << grid[i] << ',' << reps[i].dwell.dwell_time << ',' << (reps[i].dwell.escaped ? 1 : 0) << ','
                   << reps[i].secular_frequency << ',' << reps[i].predicted_frequency << '\n';
        }
        const auto th = ponderomotive_threshold(model, a, get<double>(k, "omega_lo"), get<double>(k, "omega_hi"), th0,
                                                duration, get<double>(k, "rel_tol"), opt);
        const double analytic = std::sqrt(2.0) / a;
        run.write_json("summary.json", {{"kind", kind},
                                        {"a", a},
                                        {"omega_critical", th.omega_critical},
                                        {"omega_escapes", th.omega_lo},
                                        {"omega_stays", th.omega_hi},
                                        {"bisection_iterations", th.iterations},
                                        {"omega_averaged_theory", analytic},
                                        {"relative_gap", th.omega_critical / analytic - 1.0}});
    } else {
        throw ConfigError("unknown control.kind '" + kind + "' (stimulus | viscosity | kapitza)");
    }
}

void cmd_hjb(Run& run) {
    const json& c = run.config();
    const ModelSpec model = model_from(c);
    const json& h = c.at("hjb");
    const auto mode = get<std::string>(h, "mode");
    const int grid_n = get<int>(h, "grid_n");
    if (mode == "characteristics") {
        const double E = get<double>(h, "E"), q_inside = get<double>(h, "q_inside");
        const auto up = solve_characteristics(model, E, Branch::upper, grid_n, q_inside);
        const auto lo = solve_characteristics(model, E, Branch::lower, grid_n, q_inside);
        {
            auto os = run.open("S_upper.csv");
            write_generating_function_csv(os, up);
        }
        {
            auto os = run.open("S_lower.csv");
            write_generating_function_csv(os, lo);
        }
        json s = {{"mode", mode},
                  {"E", E},
                  {"rotation", up.rotation},
                  {"residual_upper", hjb_residual(model, up)},
                  {"residual_lower", hjb_residual(model, lo)}};
        if (!up.rotation) {
            const double loop = closed_orbit_integral(up, lo);
            const double J = orbit_summary(model, E, q_inside).J;
            s["loop_integral"] = loop;
            s["two_pi_J"] = 2.0 * std::numbers::pi * J;
            s["relative_error"] = std::abs(loop / (2.0 * std::numbers::pi * J) - 1.0);
        }
        run.write_json("summary.json", s);
    } else if (mode == "viscous") {
        HJBConfig cfg;
        cfg.grid_n = grid_n;
        cfg.q_min = get<double>(h, "q_min");
        cfg.q_max = get<double>(h, "q_max");
        cfg.tol = get<double>(h, "tol");
        cfg.max_iter = get<int>(h, "max_iter");
        const Reward R = reward_from(h.at("reward"));
        const auto nus = get<std::vector<double>>(h, "nu");
        if (nus.empty()) throw ConfigError("hjb.nu must list at least one value");
        const auto probes = get<std::vector<double>>(h, "probes");
        const auto sols = viscous_sweep(model, R, cfg, nus, run.threads());
        json list = json::array();
        for (std::size_t i = 0; i < sols.size(); ++i) {
            auto os = run.open("value_" + std::to_string(i) + ".csv");
            write_generating_function_csv(os, sols[i]);
            json pj = json::array();
            for (double q : probes)
                pj.push_back({{"q", q}, {"grid", sample(sols[i], q)}, {"trajectory", trajectory_value(model, R, nus[i], q)}});
            list.push_back({{"nu", nus[i]},
                            {"file", "value_" + std::to_string(i) + ".csv"},
                            {"iterations", sols[i].iterations},
                            {"final_update", sols[i].residual_history.empty() ? 0.0 : sols[i].residual_history.back()},
                            {"probes", pj}});
        }
        run.write_json("summary.json", {{"mode", mode}, {"solves", list}});
    } else {
        throw ConfigError("unknown hjb.mode '" + mode + "' (characteristics | viscous)");
    }
}

void cmd_hst(Run& run) {
    const json& h = run.config().at("hst");
    const ComplexSignal sig = read_signal_csv(get<std::string>(h, "input"));
    const int J = get<int>(h, "J"), m_max = get<int>(h, "m_max");
    const auto bank = build_filterbank(sig.samples.size(), J, get<double>(h, "xi0"), get<double>(h, "sigma"));
    HSTOptions opt;
    opt.normalize = get<bool>(h, "normalize");
    const auto pooling = get<std::string>(h, "pooling");
    if (pooling == "lowpass")
        opt.pooling = Pooling::lowpass;
    else if (pooling == "global_mean")
        opt.pooling = Pooling::global_mean;
    else
        throw ConfigError("unknown hst.pooling '" + pooling + "' (lowpass | global_mean)");
    opt.keep_fields = m_max >= 1;
    const auto coef = hst_forward(sig, bank, m_max, opt);
    {
        auto os = run.open("hst.csv");
        write_hst_csv(os, coef);
    }
    json paths = json::array();
    for (const auto& p : coef.paths) paths.push_back(p.label());
    json side = {{"N", bank.N},
                 {"J", J},
                 {"m_max", m_max},
                 {"xi0", bank.xi0},
                 {"sigma", bank.sigma},
                 {"lp_scale", bank.lp_scale},
                 {"pooling", pooling},
                 {"normalize", opt.normalize},
                 {"normalization", coef.normalization},
                 {"range_warning", coef.range_warning},
                 {"windows", coef.windows()},
                 {"paths", paths}};
    if (m_max >= 1) {
        const auto e = order1_energy(coef);
        const auto j = static_cast<int>(std::max_element(e.begin(), e.end()) - e.begin());
        side["order1_energy"] = e;
        side["argmax_order1_scale"] = j;
        side["argmax_order1_center"] = bank.center(j);
    }
    run.write_json("hst.json", side);
}

ROMDataset dataset_from(const json& d) {
    return make_pendulum_dataset(get<int>(d, "n_traj"), get<double>(d, "E_lo"), get<double>(d, "E_hi"),
                                 get<double>(d, "duration"), get<double>(d, "spacing"), get<std::uint64_t>(d, "seed"));
}

void cmd_rom(Run& run) {
    const json& r = run.config().at("rom");
    const auto action = get<std::string>(r, "action");
    if (action == "train") {
        const json& t = r.at("train");
        TrainConfig cfg;
        cfg.epochs = get<int>(t, "epochs");
        cfg.learning_rate = get<double>(t, "learning_rate");
        cfg.final_learning_rate = get<double>(t, "final_learning_rate");
        cfg.batch_size = get<int>(t, "batch_size");
        cfg.pairs_per_trajectory = get<int>(t, "pairs_per_trajectory");
        cfg.restarts = get<int>(t, "restarts");
        cfg.w_recon = get<double>(t, "w_recon");
        cfg.w_pred = get<double>(t, "w_pred");
        cfg.taus = get<std::vector<double>>(t, "taus");
        cfg.seed = run.seed();
        cfg.threads = run.threads();

        const auto files = get<std::vector<std::string>>(r, "trajectories");
        std::optional<ROMDataset> ds;
        std::vector<Trajectory> trajs;
        if (files.empty()) {
            ds = dataset_from(r.at("dataset"));
            trajs = ds->trajectories;
        } else {
            for (const auto& f : files) {
                Trajectory tr;
                tr.samples = read_trajectory_csv(f);
                tr.dt = tr.samples.size() > 1 ? tr.samples[1].tau - tr.samples[0].tau : 0.0;
                trajs.push_back(std::move(tr));
            }
        }
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < trajs.size(); ++i)
            if (!is_held_out(i)) idx.push_back(i);
        TrainResult res;
        try {
            res = rom_train(trajs, idx, cfg);
        } catch (const TrainingDivergedError& e) {
            auto os = run.open("history.csv");
            write_history_csv(os, e.history);
            throw;
        }
        save_rom(res.params, run.path("rom.bin").string());
        run.path("rom.bin.json");
        {
            auto os = run.open("history.csv");
            write_history_csv(os, res.history);
        }
        json diag = {{"parameters", res.params.size()},
                     {"epochs", cfg.epochs},
                     {"selected_seed", res.params.seed},
                     {"restart_losses", res.restart_losses}};
        if (ds) {
            const auto d = rom_diagnostics(res.params, *ds);
            diag["held_out"] = d.held_out;
            diag["phase_scale"] = d.phase_scale;
            diag["reconstruction_rms"] = d.recon_rms;
            diag["reconstruction_rel"] = d.recon_rel;
            diag["one_period_rms"] = d.period_pred_rms;
            diag["one_period_rel"] = d.period_pred_rel;
            diag["P_cv_max"] = d.max_P_cv;
            diag["P_cv_mean"] = d.mean_P_cv;
            diag["Q_r2_min"] = d.min_Q_r2;
            diag["P_within_std"] = d.P_within_std;
            diag["P_across_std"] = d.P_across_std;
            diag["omega_rel_error"] = d.omega_rel_error;
        }
        run.write_json("diagnostics.json", diag);
    } else if (action == "predict") {
        const auto model_path = get<std::string>(r, "model_path");
        const auto input = get<std::string>(r, "input");
        if (model_path.empty() || input.empty()) throw ConfigError("rom predict needs rom.model_path and rom.input");
        const ROMParams rp = load_rom(model_path);
        const double tau = get<double>(r, "tau");
        auto os = run.open("predict.csv");
        os << "tau,q,p,P,Q\n";
        for (const auto& s : read_trajectory_csv(input)) {
            const PhaseState y = rom_predict(rp, s, tau);
            const Encoded e = rom_encode(rp, s);
            os << y.tau << ',' << y.q << ',' << y.p << ',' << e.P << ',' << e.Q() << '\n';
        }
    } else if (action == "grad-check") {
        const ROMDataset ds = dataset_from(r.at("dataset"));
        const int nb = get<int>(r, "batch");
        ROMParams rp = rom_init(ROMLayout{}, run.seed());
        std::mt19937_64 rng(run.seed());
        std::vector<TrainingPair> batch;
        const auto& tr = ds.trajectories;
        for (int b = 0; b < nb; ++b) {
            const auto& samples = tr[rng() % tr.size()].samples;
            const std::size_t i = rng() % (samples.size() / 2);
            const std::size_t k = 1 + rng() % (samples.size() / 2 - 1);
            batch.push_back({samples[i], samples[i + k], samples[i + k].tau - samples[i].tau});
        }
        const auto rep = rom_grad_check(rp, batch);
        std::cout << std::setprecision(6) << "max relative error " << rep.max_rel_error << '\n';
        run.write_json("gradcheck.json", {{"max_rel_error", rep.max_rel_error},
                                          {"worst_index", rep.worst_index},
                                          {"worst_backprop", rep.worst_backprop},
                                          {"worst_fd", rep.worst_fd},
                                          {"gradient_max", rep.gradient_max},
                                          {"nudges", rep.nudges},
                                          {"step_reductions", rep.step_reductions},
                                          {"parameters", rp.size()},
                                          {"pass", rep.max_rel_error < 1e-4}});
    } else {
        throw ConfigError("unknown rom.action '" + action + "' (train | predict | grad-check)");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"collective: Hamiltonian collective-dynamics toolkit"};
    app.require_subcommand(1);
    Globals g;
    long long seed = 0;
    std::string out;
    int threads = 1;
    std::string model;
    app.add_option("--config", g.config_path, "JSON config file (or a manifest.json from an earlier run)")
        ->envname("COLLECTIVE_CONFIG");
    auto* o_seed = app.add_option("--seed", seed, "random seed")->envname("COLLECTIVE_SEED");
    auto* o_out = app.add_option("--out", out, "output directory")->envname("COLLECTIVE_OUT");
    auto* o_thr = app.add_option("--threads", threads, "worker threads for scans")->envname("COLLECTIVE_THREADS");
    auto* o_model = app.add_option("--model", model, "model id")->envname("COLLECTIVE_MODEL");
    app.add_option("--set", g.sets, "override a config value, e.g. --set simulate.dt=1e-4");
    app.fallthrough();

    const std::vector<std::pair<std::string, void (*)(Run&)>> commands = {
        {"simulate", cmd_simulate}, {"equilibria", cmd_equilibria}, {"separatrix", cmd_separatrix},
        {"orbit", cmd_orbit},       {"control", cmd_control},       {"hjb", cmd_hjb},
        {"hst", cmd_hst},           {"rom", cmd_rom}};
    const std::map<std::string, std::string> help = {
        {"simulate", "integrate a trajectory"},
        {"equilibria", "locate and classify equilibria"},
        {"separatrix", "trace stable/unstable manifolds of x-points"},
        {"orbit", "action, period and omega_Q table"},
        {"control", "stimulus, viscosity scan or Kapitza threshold"},
        {"hjb", "generating function or discounted value on a grid"},
        {"hst", "scattering transform of a signal CSV"},
        {"rom", "train, predict or grad-check the reduced-order model"}};
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, fn] : commands) subs[name] = app.add_subcommand(name, help.at(name));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    if (o_seed->count()) g.seed = seed;
    if (o_out->count()) g.out = out;
    if (o_thr->count()) g.threads = threads;
    if (o_model->count()) g.model = model;

    std::string cmd;
    void (*fn)(Run&) = nullptr;
    for (const auto& [name, f] : commands)
        if (subs[name]->parsed()) {
            cmd = name;
            fn = f;
        }
    try {
        Run run(cmd, resolve_config(cmd, g));
        fn(run);
        run.finish();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DivergedError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return 3;
    } catch (const ConvergenceError& e) {
        std::cerr << "no convergence: " << e.what() << '\n';
        return 3;
    } catch (const StructuralAbsenceError& e) {
        std::cerr << "structural absence: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
