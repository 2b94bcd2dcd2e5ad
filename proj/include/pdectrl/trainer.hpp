#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pdectrl/losses.hpp"
#include "pdectrl/nets.hpp"

namespace pdectrl {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // coupled L2, added to the gradient
};

// Standard Adam over a ParamStore; deterministic, single-threaded updates.
class Adam {
public:
    explicit Adam(int total_numel);
    // Consumes Param::grad. Throws NumericalError naming the parameter if a
    // gradient is not finite.
    void step(ParamStore& store, const AdamConfig& cfg);
    int64_t steps_taken() const { return t_; }

private:
    std::vector<double> m_, v_;
    int64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-3;
    double weight_decay = 1e-6;
    int sched_step = 300;
    double sched_factor = 0.5;
    int epochs = 0;
    int batch_size = 32;
    uint64_t seed = 0;
    Phase1Mode mode = Phase1Mode::Supervised;
    LossWeights weights;
    double target_metric = 0.0;        // early stop when test metric <= this; 0 disables
    std::vector<int> snapshot_epochs;  // parameter snapshots after these epochs
    int eval_every = 1;
};

// lr * factor^floor(epoch / step)
double lr_at(int epoch, const TrainConfig& cfg);

struct MetricRow {
    int epoch;
    double lr, train_loss, test_metric;
};

struct TrainResult {
    std::vector<MetricRow> history;
    double best_metric = 0.0;
    int best_epoch = -1;
    std::vector<std::pair<int, std::vector<double>>> snapshots;  // epoch -> flat params
};

struct SteadyDataset {
    Grid grid;
    std::vector<Field> controls;
    std::vector<Field> states;  // aligned with controls; required for the test split
    std::vector<int> train_idx, test_idx;
};

// Trajectories of a time-dependent problem on interior points; the force is
// held fixed along each trajectory.
struct TimeDataset {
    Grid full_grid;     // solver grid including the two boundary points
    int n_interior = 0;
    int steps = 0;      // control steps per trajectory
    std::vector<std::vector<double>> states;    // [traj] -> (steps+1) * n_interior
    std::vector<std::vector<double>> controls;  // [traj] -> n_interior
    std::vector<std::pair<int, int>> train_tuples, test_tuples;  // (traj, step)

    std::span<const double> state_at(int traj, int j) const {
        return {states[static_cast<size_t>(traj)].data() + static_cast<size_t>(j) * n_interior,
                static_cast<size_t>(n_interior)};
    }
};

// Shuffled mini-batch loop; returns the model at its best test metric.
// Throws NumericalError if the loss diverges.
TrainResult train_phase1(const SteadyDataset& data, OperatorSurrogate& s, const TrainConfig& cfg);
TrainResult train_phase1_time(const TimeDataset& data, TimeSurrogate& ts, const TrainConfig& cfg);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& history);

}  // namespace pdectrl
