#pragma once

#include <functional>

#include "pdectrl/adjoint.hpp"
#include "pdectrl/config.hpp"
#include "pdectrl/container.hpp"
#include "pdectrl/controller.hpp"
#include "pdectrl/trainer.hpp"

namespace pdectrl {

// --- Poisson analytic optimum (alpha-penalized tracking of sin*sin) --------

// u_d = 1/(2 pi^2) sin(pi x) sin(pi y)
Field poisson_target_field(const Grid& g);
// m* = 1/(1 + 4 alpha pi^4) sin(pi x) sin(pi y)
Field poisson_optimal_control(const Grid& g, double alpha);
// u* = 1/(2 pi^2) m*
Field poisson_optimal_state(const Grid& g, double alpha);

// Initial-guess specs: "xy(1-x)(1-y)", "x+y", "xy", "zero",
// "sample:<seed>:<scale>".
Field make_m_init(const std::string& spec, const Grid& g);

// --- datasets ---------------------------------------------------------------

void generate_dataset(const RunConfig& cfg, const std::string& path);
SteadyDataset load_steady_dataset(const std::string& path);
TimeDataset load_time_dataset(const std::string& path);

// --- operator-error machinery (error-bound verifier) ------------------------

using OperatorApply = std::function<Field(const Field&)>;

OperatorApply surrogate_operator(const OperatorSurrogate& s);
OperatorApply poisson_solver_operator(double tol = 1e-10);

struct OperatorErrorEstimate {
    double max_err = 0.0;   // sampled lower bound on ||S - S_h||
    double mean_err = 0.0;
};
// max_i || (S - S_h)(m_i / ||m_i||) ||_2 over the samples.
OperatorErrorEstimate estimate_operator_error(const OperatorApply& approx, const OperatorApply& exact,
                                              std::span<const Field> samples);

// max over pairs of ||S_h m1 - S_h m2|| / ||m1 - m2||; degenerate pairs skipped.
double estimate_lipschitz(const OperatorApply& approx,
                          std::span<const std::pair<Field, Field>> pairs);

struct BoundEstimate {
    double eps_hat = 0.0;
    double c_hat = 0.0;
    double control_error = 0.0;  // ||m* - m_h*||_2
    double bound_rhs = 0.0;      // max(C,1) alpha^-1 (1 + alpha^-1/2) ||u_d|| eps
};

struct BoundVerdict {
    std::vector<BoundEstimate> rows;
    bool eps_strictly_decreasing = false;
    int control_error_inversions = 0;
    bool pass = false;  // eps decreasing and at most one inversion
};

// Runs phase 2 for each checkpoint (given in increasing training quality) and
// checks that better operators give no-worse optimal controls.
BoundVerdict verify_bound(std::span<const OperatorSurrogate* const> checkpoints,
                          const ControlProblem& prob, const LbfgsConfig& cfg, int n_samples,
                          uint64_t seed);

// --- orchestration shared by the CLI and the acceptance suite ---------------

struct TrainOutput {
    std::string checkpoint_path;
    TrainResult result;
};

TrainOutput run_train(const RunConfig& cfg, const std::string& out_dir);
void run_gen_data(const RunConfig& cfg, const std::string& out_dir);
void run_control(const RunConfig& cfg, const std::string& out_dir);
void run_adjoint(const RunConfig& cfg, const std::string& out_dir);
// Writes report.csv (bitwise deterministic for a fixed seed and thread count)
// and timing.csv (wall-clock, not reproducible by nature).
void run_compare(const RunConfig& cfg, const std::string& out_dir);
// Returns true when the monotone-trend verdict passes.
bool run_verify_bound(const RunConfig& cfg, const std::string& out_dir);

// Problem builders shared with tests.
ControlProblem build_steady_problem(const RunConfig& cfg, const Grid& g);
PdeSpec build_pde_spec(const RunConfig& cfg);

}  // namespace pdectrl
