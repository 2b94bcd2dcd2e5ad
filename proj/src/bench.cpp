#include "pdectrl/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "pdectrl/errors.hpp"
#include "pdectrl/threading.hpp"

namespace pdectrl {

namespace {

constexpr double kPi = std::numbers::pi;

std::string zero_pad(int v, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*d", width, v);
    return buf;
}

double stat_mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stat_std(std::span<const double> v) {
    if (v.size() < 2) return 0.0;
    const double mu = stat_mean(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double stat_median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const size_t mid = v.size() / 2;
    return v.size() % 2 ? v[mid] : 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

Field poisson_target_field(const Grid& g) {
    return sample_field(g, std::function<double(double, double)>([](double x, double y) {
                            return std::sin(kPi * x) * std::sin(kPi * y) / (2.0 * kPi * kPi);
                        }));
}

Field poisson_optimal_control(const Grid& g, double alpha) {
    const double c = 1.0 / (1.0 + 4.0 * alpha * kPi * kPi * kPi * kPi);
    return sample_field(g, std::function<double(double, double)>([c](double x, double y) {
                            return c * std::sin(kPi * x) * std::sin(kPi * y);
                        }));
}

Field poisson_optimal_state(const Grid& g, double alpha) {
    return (1.0 / (2.0 * kPi * kPi)) * poisson_optimal_control(g, alpha);
}

Field make_m_init(const std::string& spec, const Grid& g) {
    if (spec == "zero") return Field(g);
    if (g.ndim == 2) {
        if (spec == "xy(1-x)(1-y)")
            return sample_field(g, std::function<double(double, double)>(
                                       [](double x, double y) { return x * y * (1 - x) * (1 - y); }));
        if (spec == "x+y")
            return sample_field(
                g, std::function<double(double, double)>([](double x, double y) { return x + y; }));
        if (spec == "xy")
            return sample_field(
                g, std::function<double(double, double)>([](double x, double y) { return x * y; }));
    }
    if (spec.rfind("sample:", 0) == 0) {
        std::istringstream in(spec.substr(7));
        std::string seed_s, scale_s;
        std::getline(in, seed_s, ':');
        std::getline(in, scale_s, ':');
        const uint64_t seed = seed_s.empty() ? 0 : std::stoull(seed_s);
        const double scl = scale_s.empty() ? 1.0 : std::stod(scale_s);
        Rng rng(seed);
        Field f = (g.ndim == 2) ? sample_fourier_control(rng, 3, g) : sample_gaussian_pulse(rng, g);
        return scl * f;
    }
    throw ConfigError("unknown m_init spec '" + spec + "'");
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

namespace {

void gen_steady(const RunConfig& cfg, const std::string& path, PdeKind kind) {
    const int res = cfg.get_int("problem", "resolution", 64);
    const int n_train = cfg.get_int("phase1", "n_train", kind == PdeKind::Poisson ? 1000 : 3000);
    const int n_test = cfg.get_int("phase1", "n_test", kind == PdeKind::Poisson ? 200 : 300);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("phase1", "seed", 0));
    const int max_freq = cfg.get_int("phase1", "max_freq", 3);
    const Grid g = kind == PdeKind::Poisson ? make_grid_2d(res) : make_grid_1d(res);
    PdeSpec spec = build_pde_spec(cfg);

    TensorContainer c;
    c.set_meta("kind", kind == PdeKind::Poisson ? "poisson" : "wave");
    c.set_meta("resolution", std::to_string(res));
    c.set_meta("n_train", std::to_string(n_train));
    c.set_meta("n_test", std::to_string(n_test));
    c.set_meta("seed", std::to_string(seed));
    c.set_meta("sampler", kind == PdeKind::Poisson
                              ? "fourier(max_freq=" + std::to_string(max_freq) + ", coeff=U[-1,1])"
                              : "gaussian_pulse(A=U[0.5,2], mu=U[0.2,0.8], sigma=U[0.05,0.15])");

    const int total = n_train + n_test;
    std::vector<Field> ms(static_cast<size_t>(total)), us(static_cast<size_t>(total));
    parallel_for(total, [&](int i) {
        Rng rng(seed + static_cast<uint64_t>(i));  // per-sample stream
        if (kind == PdeKind::Poisson) {
            ms[static_cast<size_t>(i)] = sample_fourier_control(rng, max_freq, g);
            us[static_cast<size_t>(i)] = solve_poisson(ms[static_cast<size_t>(i)], 1e-10);
        } else {
            ms[static_cast<size_t>(i)] = sample_gaussian_pulse(rng, g);
            us[static_cast<size_t>(i)] = solve_wave(ms[static_cast<size_t>(i)], spec).back();
        }
    });
    std::vector<uint64_t> dims = (kind == PdeKind::Poisson)
                                     ? std::vector<uint64_t>{static_cast<uint64_t>(res),
                                                             static_cast<uint64_t>(res)}
                                     : std::vector<uint64_t>{static_cast<uint64_t>(res)};
    for (int i = 0; i < total; ++i) {
        c.add("m/" + zero_pad(i, 6), dims, ms[static_cast<size_t>(i)].values);
        c.add("u/" + zero_pad(i, 6), dims, us[static_cast<size_t>(i)].values);
    }
    c.save(path);
}

void gen_burgers(const RunConfig& cfg, const std::string& path) {
    const int res = cfg.get_int("problem", "resolution", 130);  // boundary included
    const int steps = cfg.get_int("phase1", "steps", 10);
    const int n_train = cfg.get_int("phase1", "n_traj_train", 270);
    const int n_test = cfg.get_int("phase1", "n_traj_test", 30);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("phase1", "seed", 0));
    const Grid g = make_grid_1d(res);
    const int n_int = res - 2;
    PdeSpec spec = build_pde_spec(cfg);

    TensorContainer c;
    c.set_meta("kind", "burgers");
    c.set_meta("resolution", std::to_string(res));
    c.set_meta("steps", std::to_string(steps));
    c.set_meta("n_traj_train", std::to_string(n_train));
    c.set_meta("n_traj_test", std::to_string(n_test));
    c.set_meta("seed", std::to_string(seed));
    c.set_meta("sampler",
               "initial=two_gaussian(A=U[0.5,1.5], c_l=U[0.2,0.4], c_r=U[0.6,0.8], sigma=U[0.05,0.12]); "
               "force=gaussian_bumps(k=U{1..7}, A=U[-1,1], mu=U[0.2,0.8], sigma=U[0.05,0.15])");

    const int total = n_train + n_test;
    std::vector<std::vector<double>> traj_states(static_cast<size_t>(total));
    std::vector<std::vector<double>> traj_forces(static_cast<size_t>(total));
    parallel_for(total, [&](int t) {
        Rng rng(seed + static_cast<uint64_t>(t));
        Field u = burgers_initial(rng, g);
        const int k = rng.uniform_int(1, 7);
        Field force = sample_gaussian_bumps(rng, g, k);
        auto& st = traj_states[static_cast<size_t>(t)];
        st.reserve(static_cast<size_t>(steps + 1) * n_int);
        for (int i = 1; i <= n_int; ++i) st.push_back(u.at(i));
        for (int j = 0; j < steps; ++j) {
            u = burgers_step(u, force, spec);
            for (int i = 1; i <= n_int; ++i) st.push_back(u.at(i));
        }
        auto& fc = traj_forces[static_cast<size_t>(t)];
        fc.reserve(static_cast<size_t>(n_int));
        for (int i = 1; i <= n_int; ++i) fc.push_back(force.at(i));
    });
    for (int t = 0; t < total; ++t) {
        c.add("traj/" + zero_pad(t, 5) + "/u",
              {static_cast<uint64_t>(steps + 1), static_cast<uint64_t>(n_int)},
              traj_states[static_cast<size_t>(t)]);
        c.add("traj/" + zero_pad(t, 5) + "/m", {static_cast<uint64_t>(n_int)},
              traj_forces[static_cast<size_t>(t)]);
    }
    c.save(path);
}

}  // namespace

void generate_dataset(const RunConfig& cfg, const std::string& path) {
    const std::string kind = cfg.kind();
    if (kind == "poisson") gen_steady(cfg, path, PdeKind::Poisson);
    else if (kind == "wave") gen_steady(cfg, path, PdeKind::Wave);
    else gen_burgers(cfg, path);
}

SteadyDataset load_steady_dataset(const std::string& path) {
    TensorContainer c = TensorContainer::load(path);
    const std::string kind = c.meta("kind");
    if (kind != "poisson" && kind != "wave")
        throw IoError(path + ": dataset kind '" + kind + "' is not a steady dataset");
    const int res = std::stoi(c.meta("resolution"));
    const int n_train = std::stoi(c.meta("n_train"));
    const int n_test = std::stoi(c.meta("n_test"));
    SteadyDataset d;
    d.grid = (kind == "poisson") ? make_grid_2d(res) : make_grid_1d(res);
    const int total = n_train + n_test;
    d.controls.reserve(static_cast<size_t>(total));
    d.states.reserve(static_cast<size_t>(total));
    for (int i = 0; i < total; ++i) {
        Field m(d.grid), u(d.grid);
        m.values = c.find("m/" + zero_pad(i, 6)).as_f64();
        u.values = c.find("u/" + zero_pad(i, 6)).as_f64();
        if (static_cast<int>(m.values.size()) != d.grid.num_points())
            throw IoError(path + ": sample size does not match the resolution metadata");
        d.controls.push_back(std::move(m));
        d.states.push_back(std::move(u));
    }
    for (int i = 0; i < n_train; ++i) d.train_idx.push_back(i);
    for (int i = n_train; i < total; ++i) d.test_idx.push_back(i);
    return d;
}

TimeDataset load_time_dataset(const std::string& path) {
    TensorContainer c = TensorContainer::load(path);
    if (c.meta("kind") != "burgers")
        throw IoError(path + ": dataset kind '" + c.meta("kind") + "' is not a time dataset");
    TimeDataset d;
    const int res = std::stoi(c.meta("resolution"));
    d.full_grid = make_grid_1d(res);
    d.n_interior = res - 2;
    d.steps = std::stoi(c.meta("steps"));
    const int n_train = std::stoi(c.meta("n_traj_train"));
    const int n_test = std::stoi(c.meta("n_traj_test"));
    const int total = n_train + n_test;
    d.states.reserve(static_cast<size_t>(total));
    d.controls.reserve(static_cast<size_t>(total));
    for (int t = 0; t < total; ++t) {
        d.states.push_back(c.find("traj/" + zero_pad(t, 5) + "/u").as_f64());
        d.controls.push_back(c.find("traj/" + zero_pad(t, 5) + "/m").as_f64());
        if (static_cast<int>(d.states.back().size()) != (d.steps + 1) * d.n_interior)
            throw IoError(path + ": trajectory length does not match metadata");
    }
    for (int t = 0; t < total; ++t)
        for (int j = 0; j < d.steps; ++j)
            (t < n_train ? d.train_tuples : d.test_tuples).emplace_back(t, j);
    return d;
}

// ---------------------------------------------------------------------------
// operator-error estimates and the bound verifier
// ---------------------------------------------------------------------------

OperatorApply surrogate_operator(const OperatorSurrogate& s) {
    return [&s](const Field& m) { return s.predict_state(m); };
}

OperatorApply poisson_solver_operator(double tol) {
    return [tol](const Field& m) { return solve_poisson(m, tol); };
}

OperatorErrorEstimate estimate_operator_error(const OperatorApply& approx, const OperatorApply& exact,
                                              std::span<const Field> samples) {
    if (samples.empty()) throw ConfigError("estimate_operator_error: no samples");
    OperatorErrorEstimate est;
    double sum = 0.0;
    for (const Field& m : samples) {
        const double nm = norm_l2(m);
        if (nm == 0.0) throw NumericalError("estimate_operator_error: zero-norm sample");
        const Field mhat = (1.0 / nm) * m;
        const double err = norm_l2(approx(mhat) - exact(mhat));
        est.max_err = std::max(est.max_err, err);
        sum += err;
    }
    est.mean_err = sum / static_cast<double>(samples.size());
    return est;
}

double estimate_lipschitz(const OperatorApply& approx,
                          std::span<const std::pair<Field, Field>> pairs) {
    double c = 0.0;
    for (const auto& [m1, m2] : pairs) {
        const double dm = norm_l2(m1 - m2);
        if (dm == 0.0) continue;
        c = std::max(c, norm_l2(approx(m1) - approx(m2)) / dm);
    }
    return c;
}

BoundVerdict verify_bound(std::span<const OperatorSurrogate* const> checkpoints,
                          const ControlProblem& prob, const LbfgsConfig& cfg, int n_samples,
                          uint64_t seed) {
    if (checkpoints.size() < 3)
        throw ConfigError("verify_bound: need at least 3 checkpoints, got " +
                          std::to_string(checkpoints.size()));
    const Grid g = prob.target.grid;
    std::vector<Field> samples;
    samples.reserve(static_cast<size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        Rng rng(seed + static_cast<uint64_t>(i));
        samples.push_back(sample_fourier_control(rng, 3, g));
    }
    std::vector<std::pair<Field, Field>> pairs;
    for (size_t i = 0; i + 1 < samples.size(); ++i)
        pairs.emplace_back(samples[i], samples[i + 1]);

    const OperatorApply oracle = poisson_solver_operator(1e-10);
    const Field m_star = poisson_optimal_control(g, prob.alpha);
    const Field m_init = make_m_init("xy(1-x)(1-y)", g);
    const double ud_norm = norm_l2(prob.target);

    BoundVerdict v;
    for (const OperatorSurrogate* s : checkpoints) {
        BoundEstimate row;
        const auto est = estimate_operator_error(surrogate_operator(*s), oracle, samples);
        row.eps_hat = est.max_err;
        row.c_hat = estimate_lipschitz(surrogate_operator(*s), pairs);
        Phase2Result p2 = phase2_steady(*s, prob, m_init, cfg);
        row.control_error = norm_l2(p2.control - m_star);
        const double c_eff = std::max(row.c_hat, 1.0);
        row.bound_rhs = c_eff / prob.alpha * (1.0 + 1.0 / std::sqrt(prob.alpha)) * ud_norm * row.eps_hat;
        v.rows.push_back(row);
    }
    v.eps_strictly_decreasing = true;
    for (size_t i = 0; i + 1 < v.rows.size(); ++i)
        if (!(v.rows[i + 1].eps_hat < v.rows[i].eps_hat)) v.eps_strictly_decreasing = false;
    for (size_t i = 0; i + 1 < v.rows.size(); ++i)
        if (v.rows[i + 1].control_error > v.rows[i].control_error * (1.0 + 1e-12))
            ++v.control_error_inversions;
    v.pass = v.eps_strictly_decreasing && v.control_error_inversions <= 1;
    return v;
}

// ---------------------------------------------------------------------------
// config -> problem builders
// ---------------------------------------------------------------------------

PdeSpec build_pde_spec(const RunConfig& cfg) {
    PdeSpec spec;
    const std::string kind = cfg.kind();
    if (kind == "poisson") {
        spec.kind = PdeKind::Poisson;
    } else if (kind == "wave") {
        spec.kind = PdeKind::Wave;
        spec.wave_speed = cfg.get_f64("problem", "wave_speed", 1.0 / 3.0);
        spec.wave_T = cfg.get_f64("problem", "T", 5.0);
        spec.wave_nt = cfg.get_int("problem", "nt", 0);
        spec.wave_cfl = cfg.get_f64("problem", "cfl", 0.25);
    } else {
        spec.kind = PdeKind::Burgers;
        spec.nu = cfg.get_f64("problem", "nu", 0.01);
        spec.burgers_T = cfg.get_f64("problem", "T", 1.0);
        spec.burgers_dt = cfg.get_f64("problem", "dt", 0.1);
        spec.substeps = cfg.get_int("problem", "substeps", 40);
    }
    return spec;
}

namespace {

Field load_field_entry(const std::string& spec, const Grid& g) {
    // file:<path>#<entry>
    const std::string rest = spec.substr(5);
    const size_t hash = rest.find('#');
    if (hash == std::string::npos) throw ConfigError("ud file spec needs file:<path>#<entry>");
    TensorContainer c = TensorContainer::load(rest.substr(0, hash));
    Field f(g);
    f.values = c.find(rest.substr(hash + 1)).as_f64();
    if (static_cast<int>(f.values.size()) != g.num_points())
        throw ConfigError("ud entry size does not match the problem grid");
    return f;
}

}  // namespace

ControlProblem build_steady_problem(const RunConfig& cfg, const Grid& g) {
    const std::string kind = cfg.kind();
    ControlProblem prob;
    prob.pde = build_pde_spec(cfg);
    prob.alpha = cfg.get_f64("problem", "alpha", kind == "poisson" ? 1e-6 : 0.0);
    prob.lambda2 = cfg.get_f64("phase2", "lambda2", kind == "poisson" ? 0.005 : 0.001);
    const std::string ud = cfg.get_str("problem", "ud", kind == "poisson" ? "analytic" : "");
    if (ud == "analytic") {
        if (kind != "poisson") throw ConfigError("ud=analytic is only defined for poisson");
        prob.target = poisson_target_field(g);
    } else if (ud.rfind("sample:", 0) == 0) {
        Rng rng(std::stoull(ud.substr(7)));
        if (kind == "poisson") {
            prob.target = solve_poisson(sample_fourier_control(rng, 3, g), 1e-10);
        } else {
            prob.target = solve_wave(sample_gaussian_pulse(rng, g), prob.pde).back();
        }
    } else if (ud.rfind("file:", 0) == 0) {
        prob.target = load_field_entry(ud, g);
    } else {
        throw ConfigError("problem.ud must be analytic, sample:<seed> or file:<path>#<entry>");
    }
    if (cfg.has("phase2", "bound_lo")) {
        Field lo(g);
        std::fill(lo.values.begin(), lo.values.end(), cfg.get_f64("phase2", "bound_lo", 0.0));
        prob.lower = std::move(lo);
        Field hi(g);
        std::fill(hi.values.begin(), hi.values.end(), cfg.get_f64("phase2", "bound_hi", 0.0));
        prob.upper = std::move(hi);
    }
    return prob;
}

namespace {

LbfgsConfig build_lbfgs_config(const RunConfig& cfg) {
    const std::string kind = cfg.kind();
    LbfgsConfig lc;
    lc.lr = cfg.get_f64("phase2", "lr", kind == "burgers" ? 0.5 : 1.0);
    lc.memory = cfg.get_int("phase2", "memory", 10);
    lc.c1 = cfg.get_f64("phase2", "c1", 1e-4);
    lc.c2 = cfg.get_f64("phase2", "c2", 0.9);
    lc.max_iters = cfg.get_int("phase2", "max_iters", 200);
    lc.tolerance_change = cfg.get_f64("phase2", "tolerance_change", kind == "burgers" ? 4e-6 : 1e-9);
    return lc;
}

std::string default_m_init(const std::string& kind) {
    if (kind == "poisson") return "xy(1-x)(1-y)";
    return "sample:1:0.2";
}

// (u0, force) pair behind a burgers sample:<seed> target.
struct BurgersScenario {
    Field u0_full;
    std::vector<double> u0_int, target_int;
};

BurgersScenario burgers_scenario(uint64_t seed, const Grid& g, const PdeSpec& spec, int steps) {
    BurgersScenario sc;
    Rng rng(seed);
    sc.u0_full = burgers_initial(rng, g);
    const int k = rng.uniform_int(1, 7);
    Field force = sample_gaussian_bumps(rng, g, k);
    Field u = sc.u0_full;
    for (int j = 0; j < steps; ++j) u = burgers_step(u, force, spec);
    const int n_int = g.n - 2;
    sc.u0_int.resize(static_cast<size_t>(n_int));
    sc.target_int.resize(static_cast<size_t>(n_int));
    for (int i = 0; i < n_int; ++i) {
        sc.u0_int[static_cast<size_t>(i)] = sc.u0_full.at(i + 1);
        sc.target_int[static_cast<size_t>(i)] = u.at(i + 1);
    }
    return sc;
}

TimeControlProblem build_time_problem(const RunConfig& cfg, const Grid& g, uint64_t scenario_seed) {
    TimeControlProblem prob;
    prob.pde = build_pde_spec(cfg);
    prob.full_grid = g;
    prob.steps = cfg.get_int("phase1", "steps", 10);
    prob.alpha = cfg.get_f64("problem", "alpha", 0.01);
    prob.jobj_weight = cfg.get_f64("phase2", "jobj_weight", 10.0);
    prob.jrec_weight = cfg.get_f64("phase2", "jrec_weight", 0.3);
    BurgersScenario sc = burgers_scenario(scenario_seed, g, prob.pde, prob.steps);
    prob.u0 = std::move(sc.u0_int);
    prob.target = std::move(sc.target_int);
    return prob;
}

std::vector<std::vector<double>> burgers_m_init(uint64_t seed, const Grid& g, int steps) {
    Rng rng(seed);
    Field f = sample_gaussian_bumps(rng, g, 2);
    const int n_int = g.n - 2;
    std::vector<double> slice(static_cast<size_t>(n_int));
    for (int i = 0; i < n_int; ++i) slice[static_cast<size_t>(i)] = 0.05 * f.at(i + 1);
    return std::vector<std::vector<double>>(static_cast<size_t>(steps), slice);
}

std::filesystem::path out_path(const std::string& out_dir, const std::string& name) {
    std::filesystem::path p(out_dir);
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    return p / name;
}

}  // namespace

// ---------------------------------------------------------------------------
// CLI orchestration
// ---------------------------------------------------------------------------

void run_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    const std::string path = cfg.get_str("paths", "data", (out_path(out_dir, "dataset.pdec")).string());
    generate_dataset(cfg, path);
}

TrainOutput run_train(const RunConfig& cfg, const std::string& out_dir) {
    const std::string kind = cfg.kind();
    const std::string data_path = cfg.require("paths", "data");
    const std::string ckpt_path =
        cfg.get_str("paths", "checkpoint", out_path(out_dir, "checkpoint.pdec").string());

    TrainConfig tc;
    tc.lr = cfg.get_f64("phase1", "lr", 1e-3);
    tc.weight_decay = cfg.get_f64("phase1", "weight_decay", kind == "poisson" ? 1e-6 : 1e-4);
    tc.sched_step = cfg.get_int("phase1", "sched_step", 300);
    tc.sched_factor = cfg.get_f64("phase1", "sched_factor", 0.5);
    tc.batch_size = cfg.get_int("phase1", "batch", 32);
    tc.seed = static_cast<uint64_t>(cfg.get_int("phase1", "seed", 0));
    tc.weights.lambda1 = cfg.get_f64("phase1", "lambda1", 1.5);
    tc.weights.w_latent = cfg.get_f64("phase1", "w_latent", 1.0);
    tc.weights.w_state = cfg.get_f64("phase1", "w_state", 1.5);
    tc.weights.w_state_rec = cfg.get_f64("phase1", "w_state_rec", 0.5);
    tc.weights.w_control_rec = cfg.get_f64("phase1", "w_control_rec", 1.0);
    tc.target_metric = cfg.get_f64("phase1", "target_metric", 0.0);
    tc.snapshot_epochs = cfg.get_int_list("phase1", "snapshot_epochs", {});
    tc.eval_every = cfg.get_int("phase1", "eval_every", 1);
    const std::string mode = cfg.get_str("phase1", "mode", "supervised");
    if (mode != "supervised" && mode != "residual")
        throw ConfigError("phase1.mode must be supervised or residual");
    tc.mode = (mode == "residual") ? Phase1Mode::Residual : Phase1Mode::Supervised;
    if (tc.mode == Phase1Mode::Residual && kind != "poisson")
        throw ConfigError("residual mode is only defined for the poisson problem");

    TrainOutput out;
    out.checkpoint_path = ckpt_path;
    if (kind == "burgers") {
        TimeDataset data = load_time_dataset(data_path);
        tc.epochs = cfg.get_int("phase1", "epochs", 150);
        TimeArch arch = TimeArch::burgers_default(data.n_interior);
        arch.kernel = cfg.get_int("phase1", "kernel", arch.kernel);
        arch.hidden = cfg.get_int_list("phase1", "hidden", arch.hidden);
        arch.latent_channels = cfg.get_int("phase1", "latent_channels", arch.latent_channels);
        arch.transition_kernel = cfg.get_int("phase1", "transition_kernel", arch.transition_kernel);
        TimeSurrogate ts = TimeSurrogate::build(arch, tc.seed);
        out.result = train_phase1_time(data, ts, tc);
        save_checkpoint(ts, ckpt_path,
                        {{"test_metric", std::to_string(out.result.best_metric)},
                         {"best_epoch", std::to_string(out.result.best_epoch)},
                         {"dataset", data_path}});
        for (const auto& [epoch, params] : out.result.snapshots) {
            TimeSurrogate snap = TimeSurrogate::build(arch, tc.seed);
            snap.store.set_flat_values(params);
            save_checkpoint(snap, out_path(out_dir, "snapshot_epoch" + zero_pad(epoch, 4) + ".pdec").string(),
                            {{"snapshot_epoch", std::to_string(epoch)}});
        }
    } else {
        SteadyDataset data = load_steady_dataset(data_path);
        tc.epochs = cfg.get_int("phase1", "epochs", kind == "poisson" ? 900 : 300);
        SteadyArch arch = (kind == "poisson") ? SteadyArch::poisson_default(data.grid.n)
                                              : SteadyArch::wave_default(data.grid.n);
        arch.latent = cfg.get_int("phase1", "latent", arch.latent);
        arch.kernel = cfg.get_int("phase1", "kernel", arch.kernel);
        arch.enc_channels = cfg.get_int_list("phase1", "enc_channels", arch.enc_channels);
        arch.dec_channels = cfg.get_int_list("phase1", "dec_channels", arch.dec_channels);
        OperatorSurrogate s = OperatorSurrogate::build(arch, tc.seed);
        out.result = train_phase1(data, s, tc);
        save_checkpoint(s, ckpt_path,
                        {{"test_metric", std::to_string(out.result.best_metric)},
                         {"best_epoch", std::to_string(out.result.best_epoch)},
                         {"dataset", data_path},
                         {"mode", mode}});
        for (const auto& [epoch, params] : out.result.snapshots) {
            OperatorSurrogate snap = OperatorSurrogate::build(arch, tc.seed);
            snap.store.set_flat_values(params);
            save_checkpoint(snap, out_path(out_dir, "snapshot_epoch" + zero_pad(epoch, 4) + ".pdec").string(),
                            {{"snapshot_epoch", std::to_string(epoch)}});
        }
    }
    write_metrics_csv(out_path(out_dir, "metrics.csv").string(), out.result.history);
    return out;
}

void run_control(const RunConfig& cfg, const std::string& out_dir) {
    const std::string kind = cfg.kind();
    const std::string ckpt = cfg.require("paths", "checkpoint");
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    if (kind == "burgers") {
        TimeSurrogate ts = load_time_checkpoint(ckpt);
        const Grid g = make_grid_1d(ts.arch.n + 2);
        const std::string ud = cfg.get_str("problem", "ud", "sample:0");
        if (ud.rfind("sample:", 0) != 0)
            throw ConfigError("burgers control needs ud=sample:<seed>");
        TimeControlProblem prob = build_time_problem(cfg, g, std::stoull(ud.substr(7)));
        auto m0 = burgers_m_init(static_cast<uint64_t>(cfg.get_int("compare", "seed", 0)) + 1,
                                 g, prob.steps);
        Phase2TimeResult res = phase2_time(ts, prob, m0, lc);
        TensorContainer c;
        c.set_meta("kind", "burgers_control");
        c.set_meta("objective_surrogate", std::to_string(res.opt.f));
        c.set_meta("objective_solver", std::to_string(burgers_objective(res.controls, prob)));
        for (int j = 0; j < prob.steps; ++j)
            c.add("m/" + zero_pad(j, 3), {static_cast<uint64_t>(ts.arch.n)},
                  res.controls[static_cast<size_t>(j)]);
        c.save(out_path(out_dir, "control.pdec").string());
        write_history_csv(out_path(out_dir, "history.csv").string(), res.opt.history);
        return;
    }
    OperatorSurrogate s = load_operator_checkpoint(ckpt);
    const Grid g = s.grid();
    ControlProblem prob = build_steady_problem(cfg, g);
    const Field m0 = make_m_init(cfg.get_str("phase2", "m_init", default_m_init(kind)), g);
    Phase2Result res = phase2_steady(s, prob, m0, lc);
    TensorContainer c;
    c.set_meta("kind", kind + "_control");
    std::vector<uint64_t> dims = (g.ndim == 2)
                                     ? std::vector<uint64_t>{(uint64_t)g.n, (uint64_t)g.n}
                                     : std::vector<uint64_t>{(uint64_t)g.n};
    c.add("m", dims, res.control.values);
    c.add("u_pred", dims, res.predicted_state.values);
    c.save(out_path(out_dir, "control.pdec").string());
    write_history_csv(out_path(out_dir, "history.csv").string(), res.opt.history);
}

void run_adjoint(const RunConfig& cfg, const std::string& out_dir) {
    const std::string kind = cfg.kind();
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    if (kind == "burgers") {
        const int res = cfg.get_int("problem", "resolution", 130);
        const Grid g = make_grid_1d(res);
        const std::string ud = cfg.get_str("problem", "ud", "sample:0");
        if (ud.rfind("sample:", 0) != 0)
            throw ConfigError("burgers adjoint needs ud=sample:<seed>");
        TimeControlProblem prob = build_time_problem(cfg, g, std::stoull(ud.substr(7)));
        auto m0 = burgers_m_init(static_cast<uint64_t>(cfg.get_int("compare", "seed", 0)) + 1,
                                 g, prob.steps);
        AdjointRunResult resr = adjoint_control_time(prob, m0, lc);
        TensorContainer c;
        c.set_meta("kind", "burgers_adjoint");
        c.set_meta("objective", std::to_string(resr.opt.f));
        for (int j = 0; j < prob.steps; ++j)
            c.add("m/" + zero_pad(j, 3), {static_cast<uint64_t>(res - 2)},
                  resr.control_slices[static_cast<size_t>(j)]);
        c.save(out_path(out_dir, "control.pdec").string());
        write_history_csv(out_path(out_dir, "history.csv").string(), resr.opt.history);
        return;
    }
    const int res = cfg.get_int("problem", "resolution", 64);
    const Grid g = (kind == "poisson") ? make_grid_2d(res) : make_grid_1d(res);
    ControlProblem prob = build_steady_problem(cfg, g);
    const Field m0 = make_m_init(cfg.get_str("phase2", "m_init", default_m_init(kind)), g);
    AdjointRunResult resr = adjoint_control(prob, m0, lc);
    TensorContainer c;
    c.set_meta("kind", kind + "_adjoint");
    std::vector<uint64_t> dims = (g.ndim == 2)
                                     ? std::vector<uint64_t>{(uint64_t)g.n, (uint64_t)g.n}
                                     : std::vector<uint64_t>{(uint64_t)g.n};
    c.add("m", dims, resr.control.values);
    c.save(out_path(out_dir, "control.pdec").string());
    write_history_csv(out_path(out_dir, "history.csv").string(), resr.opt.history);
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

namespace {

struct CompareRow {
    std::string method, run;
    std::vector<double> objective, rel_m, rel_u, iters;
    std::vector<double> wall_ms;
};

void write_compare_csvs(const std::string& kind, const std::string& out_dir,
                        const std::vector<CompareRow>& rows) {
    namespace fs = std::filesystem;
    {
        fs::path p = out_path(out_dir, "report.csv");
        fs::path tmp = p;
        tmp += ".tmp";
        FILE* f = std::fopen(tmp.c_str(), "w");
        if (!f) throw IoError("cannot open '" + tmp.string() + "'");
        std::fprintf(f,
                     "problem,method,run,samples,objective_mean,objective_std,rel_m_mean,rel_m_std,"
                     "rel_u_mean,rel_u_std,iters_mean\n");
        for (const auto& r : rows)
            std::fprintf(f, "%s,%s,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", kind.c_str(),
                         r.method.c_str(), r.run.c_str(), r.objective.size(), stat_mean(r.objective),
                         stat_std(r.objective), stat_mean(r.rel_m), stat_std(r.rel_m),
                         stat_mean(r.rel_u), stat_std(r.rel_u), stat_mean(r.iters));
        std::fclose(f);
        std::error_code ec;
        fs::rename(tmp, p, ec);
        if (ec) throw IoError("rename failed: " + ec.message());
    }
    {
        fs::path p = out_path(out_dir, "timing.csv");
        FILE* f = std::fopen(p.c_str(), "w");
        if (!f) throw IoError("cannot open '" + p.string() + "'");
        std::fprintf(f, "problem,method,run,repeats,wall_ms_mean,wall_ms_std,wall_ms_median\n");
        for (const auto& r : rows)
            std::fprintf(f, "%s,%s,%s,%zu,%.3f,%.3f,%.3f\n", kind.c_str(), r.method.c_str(),
                         r.run.c_str(), r.wall_ms.size(), stat_mean(r.wall_ms), stat_std(r.wall_ms),
                         stat_median(r.wall_ms));
        std::fclose(f);
    }
}

void compare_poisson(const RunConfig& cfg, const std::string& out_dir) {
    OperatorSurrogate s = load_operator_checkpoint(cfg.require("paths", "checkpoint"));
    const Grid g = s.grid();
    ControlProblem prob = build_steady_problem(cfg, g);
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    const int repeats = cfg.get_int("compare", "repeats", 3);
    std::vector<std::string> inits;
    {
        std::istringstream in(cfg.get_str("compare", "inits", "xy(1-x)(1-y);x+y;xy"));
        std::string tok;
        while (std::getline(in, tok, ';'))
            if (!tok.empty()) inits.push_back(tok);
    }
    const Field m_star = poisson_optimal_control(g, prob.alpha);
    const Field u_star = poisson_optimal_state(g, prob.alpha);

    std::vector<CompareRow> rows;
    for (const std::string& init : inits) {
        const Field m0 = make_m_init(init, g);
        CompareRow sr{"surrogate", init, {}, {}, {}, {}, {}};
        CompareRow ar{"adjoint", init, {}, {}, {}, {}, {}};
        for (int rep = 0; rep < repeats; ++rep) {
            Phase2Result p2 = phase2_steady(s, prob, m0, lc);
            sr.wall_ms.push_back(p2.wall_ms);
            AdjointRunResult ad = adjoint_control(prob, m0, lc);
            ar.wall_ms.push_back(ad.wall_ms);
            if (rep == 0) {
                sr.objective.push_back(poisson_objective(p2.control, prob));
                sr.rel_m.push_back(rel_error(p2.control, m_star));
                sr.rel_u.push_back(rel_error(solve_poisson(p2.control, 1e-10), u_star));
                sr.iters.push_back(p2.opt.iterations);
                ar.objective.push_back(poisson_objective(ad.control, prob));
                ar.rel_m.push_back(rel_error(ad.control, m_star));
                ar.rel_u.push_back(rel_error(solve_poisson(ad.control, 1e-10), u_star));
                ar.iters.push_back(ad.opt.iterations);
            }
        }
        rows.push_back(std::move(sr));
        rows.push_back(std::move(ar));
    }
    write_compare_csvs("poisson", out_dir, rows);
}

void compare_wave(const RunConfig& cfg, const std::string& out_dir) {
    OperatorSurrogate s = load_operator_checkpoint(cfg.require("paths", "checkpoint"));
    const Grid g = s.grid();
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    const int n_samples = cfg.get_int("compare", "samples", 20);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("compare", "seed", 0));

    CompareRow sr{"surrogate", "samples", {}, {}, {}, {}, {}};
    CompareRow ar{"adjoint", "samples", {}, {}, {}, {}, {}};
    sr.objective.resize(static_cast<size_t>(n_samples));
    sr.iters.resize(static_cast<size_t>(n_samples));
    sr.wall_ms.resize(static_cast<size_t>(n_samples));
    ar.objective.resize(static_cast<size_t>(n_samples));
    ar.iters.resize(static_cast<size_t>(n_samples));
    ar.wall_ms.resize(static_cast<size_t>(n_samples));

    parallel_for(n_samples, [&](int i) {
        ControlProblem prob = build_steady_problem(cfg, g);
        Rng trng(seed + static_cast<uint64_t>(i));
        prob.target = solve_wave(sample_gaussian_pulse(trng, g), prob.pde).back();
        Rng irng(seed + 500000 + static_cast<uint64_t>(i));
        const Field m0 = 0.2 * sample_gaussian_pulse(irng, g);

        Phase2Result p2 = phase2_steady(s, prob, m0, lc);
        sr.objective[static_cast<size_t>(i)] = wave_objective(p2.control, prob);
        sr.iters[static_cast<size_t>(i)] = p2.opt.iterations;
        sr.wall_ms[static_cast<size_t>(i)] = p2.wall_ms;

        AdjointRunResult ad = adjoint_control(prob, m0, lc);
        ar.objective[static_cast<size_t>(i)] = wave_objective(ad.control, prob);
        ar.iters[static_cast<size_t>(i)] = ad.opt.iterations;
        ar.wall_ms[static_cast<size_t>(i)] = ad.wall_ms;
    });
    write_compare_csvs("wave", out_dir, {sr, ar});
}

void compare_burgers(const RunConfig& cfg, const std::string& out_dir) {
    TimeSurrogate ts = load_time_checkpoint(cfg.require("paths", "checkpoint"));
    const Grid g = make_grid_1d(ts.arch.n + 2);
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    const int n_samples = cfg.get_int("compare", "samples", 20);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("compare", "seed", 0));

    CompareRow sr{"surrogate", "samples", {}, {}, {}, {}, {}};
    CompareRow ar{"adjoint", "samples", {}, {}, {}, {}, {}};
    sr.objective.resize(static_cast<size_t>(n_samples));
    sr.iters.resize(static_cast<size_t>(n_samples));
    sr.wall_ms.resize(static_cast<size_t>(n_samples));
    ar.objective.resize(static_cast<size_t>(n_samples));
    ar.iters.resize(static_cast<size_t>(n_samples));
    ar.wall_ms.resize(static_cast<size_t>(n_samples));

    parallel_for(n_samples, [&](int i) {
        TimeControlProblem prob = build_time_problem(cfg, g, seed + static_cast<uint64_t>(i));
        auto m0 = burgers_m_init(seed + 600000 + static_cast<uint64_t>(i), g, prob.steps);

        Phase2TimeResult p2 = phase2_time(ts, prob, m0, lc);
        sr.objective[static_cast<size_t>(i)] = burgers_objective(p2.controls, prob);
        sr.iters[static_cast<size_t>(i)] = p2.opt.iterations;
        sr.wall_ms[static_cast<size_t>(i)] = p2.wall_ms;

        AdjointRunResult ad = adjoint_control_time(prob, m0, lc);
        ar.objective[static_cast<size_t>(i)] = burgers_objective(ad.control_slices, prob);
        ar.iters[static_cast<size_t>(i)] = ad.opt.iterations;
        ar.wall_ms[static_cast<size_t>(i)] = ad.wall_ms;
    });
    write_compare_csvs("burgers", out_dir, {sr, ar});
}

}  // namespace

void run_compare(const RunConfig& cfg, const std::string& out_dir) {
    const std::string kind = cfg.kind();
    if (kind == "poisson") compare_poisson(cfg, out_dir);
    else if (kind == "wave") compare_wave(cfg, out_dir);
    else compare_burgers(cfg, out_dir);
}

bool run_verify_bound(const RunConfig& cfg, const std::string& out_dir) {
    if (cfg.kind() != "poisson")
        throw ConfigError("verify-bound is defined for the poisson problem (analytic optimum)");
    std::vector<OperatorSurrogate> loaded;
    {
        std::istringstream in(cfg.require("paths", "checkpoint"));
        std::string tok;
        while (std::getline(in, tok, ';'))
            if (!tok.empty()) loaded.push_back(load_operator_checkpoint(tok));
    }
    std::vector<const OperatorSurrogate*> ptrs;
    ptrs.reserve(loaded.size());
    for (const auto& s : loaded) ptrs.push_back(&s);
    if (loaded.empty()) throw ConfigError("verify-bound: no checkpoints given");
    const Grid g = loaded.front().grid();
    ControlProblem prob = build_steady_problem(cfg, g);
    const LbfgsConfig lc = build_lbfgs_config(cfg);
    const int n_samples = cfg.get_int("compare", "samples", 32);
    const uint64_t seed = static_cast<uint64_t>(cfg.get_int("compare", "seed", 9000));

    BoundVerdict v = verify_bound(ptrs, prob, lc, n_samples, seed);

    FILE* f = std::fopen(out_path(out_dir, "bound.csv").c_str(), "w");
    if (!f) throw IoError("cannot open bound.csv");
    std::fprintf(f, "checkpoint,eps_hat,c_hat,control_error,bound_rhs\n");
    for (size_t i = 0; i < v.rows.size(); ++i)
        std::fprintf(f, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, v.rows[i].eps_hat, v.rows[i].c_hat,
                     v.rows[i].control_error, v.rows[i].bound_rhs);
    std::fclose(f);

    std::printf("verify-bound: eps_hat %s, control-error inversions %d -> %s\n",
                v.eps_strictly_decreasing ? "strictly decreasing" : "NOT decreasing",
                v.control_error_inversions, v.pass ? "PASS" : "FAIL");
    return v.pass;
}

}  // namespace pdectrl
