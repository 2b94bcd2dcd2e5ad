#include "pdectrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <memory>

#include "pdectrl/errors.hpp"
#include "pdectrl/threading.hpp"

namespace pdectrl {

namespace {
// Samples per gradient slice. Fixed (not tied to the thread count) so the
// reduction order, and therefore the trajectory, is identical for any
// --threads setting.
constexpr int kSliceSize = 4;
}

Adam::Adam(int total_numel)
    : m_(static_cast<size_t>(total_numel), 0.0), v_(static_cast<size_t>(total_numel), 0.0) {}

void Adam::step(ParamStore& store, const AdamConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    size_t off = 0;
    for (size_t pi = 0; pi < store.size(); ++pi) {
        Param& p = store[static_cast<int>(pi)];
        for (size_t k = 0; k < p.value.size(); ++k, ++off) {
            double g = p.grad[k];
            if (!std::isfinite(g))
                throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
            g += cfg.weight_decay * p.value[k];
            m_[off] = cfg.beta1 * m_[off] + (1.0 - cfg.beta1) * g;
            v_[off] = cfg.beta2 * v_[off] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m_[off] / bc1;
            const double vhat = v_[off] / bc2;
            p.value[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at: negative epoch");
    const int decays = cfg.sched_step > 0 ? epoch / cfg.sched_step : 0;
    return cfg.lr * std::pow(cfg.sched_factor, static_cast<double>(decays));
}

namespace {

void fisher_yates(std::vector<int>& idx, Rng& rng) {
    for (int i = static_cast<int>(idx.size()) - 1; i > 0; --i)
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(0, i))]);
}

struct SliceWork {
    std::unique_ptr<Tape> tape;
    BoundParams bound;
    double loss_sum = 0.0;
};

}  // namespace

TrainResult train_phase1(const SteadyDataset& data, OperatorSurrogate& s, const TrainConfig& cfg) {
    if (data.train_idx.empty()) throw ConfigError("train_phase1: empty training split");
    if (cfg.mode == Phase1Mode::Residual && s.arch.ndim != 2)
        throw ConfigError("residual training is defined for the 2d Poisson problem");
    TrainResult result;
    if (cfg.epochs == 0) return result;

    const int n_train = static_cast<int>(data.train_idx.size());
    Adam adam(s.store.total_numel());
    Rng rng(cfg.seed);
    std::vector<int> order = data.train_idx;

    auto eval_test = [&]() {
        const auto& test = data.test_idx;
        const int n_slices = (static_cast<int>(test.size()) + kSliceSize - 1) / kSliceSize;
        std::vector<double> sums(static_cast<size_t>(n_slices), 0.0);
        parallel_for(n_slices, [&](int si) {
            double acc = 0.0;
            const int lo = si * kSliceSize;
            const int hi = std::min<int>(lo + kSliceSize, static_cast<int>(test.size()));
            for (int k = lo; k < hi; ++k) {
                const Field& m = data.controls[static_cast<size_t>(test[static_cast<size_t>(k)])];
                const Field& u = data.states[static_cast<size_t>(test[static_cast<size_t>(k)])];
                Tape tape;
                BoundParams b = s.bind(tape, false);
                Tensor m_t = tape.leaf_view(s.input_shape(), m.values.data(), false);
                Tensor pred = s.predict_state(tape, b, m_t);
                Tensor label = tape.leaf_view(s.input_shape(), u.values.data(), false);
                acc += relative_error_graph(tape, pred, label).scalar();
            }
            sums[static_cast<size_t>(si)] = acc;
        });
        double total = 0.0;
        for (double v : sums) total += v;
        return total / static_cast<double>(test.size());
    };

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_params;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        fisher_yates(order, rng);
        const double lr = lr_at(epoch, cfg);
        double epoch_loss_sum = 0.0;

        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n_train - start);
            const int n_slices = (bn + kSliceSize - 1) / kSliceSize;
            std::vector<SliceWork> work(static_cast<size_t>(n_slices));
            parallel_for(n_slices, [&](int si) {
                SliceWork& w = work[static_cast<size_t>(si)];
                w.tape = std::make_unique<Tape>();
                w.bound = s.bind(*w.tape, true);
                const int lo = start + si * kSliceSize;
                const int hi = std::min(lo + kSliceSize, start + bn);
                std::vector<Field> ms, us;
                for (int k = lo; k < hi; ++k) {
                    const int idx = order[static_cast<size_t>(k)];
                    ms.push_back(data.controls[static_cast<size_t>(idx)]);
                    if (cfg.mode == Phase1Mode::Supervised)
                        us.push_back(data.states[static_cast<size_t>(idx)]);
                }
                Tensor loss = phase1_loss_sum_graph(*w.tape, s, w.bound, ms, us, cfg.mode, cfg.weights);
                w.loss_sum = loss.scalar();
                w.tape->backward(loss);
            });
            s.store.zero_grads();
            double batch_sum = 0.0;
            for (auto& w : work) {
                harvest_grads(w.bound, s.store);
                batch_sum += w.loss_sum;
                w.tape.reset();
            }
            if (!std::isfinite(batch_sum))
                throw NumericalError("training diverged at epoch " + std::to_string(epoch));
            epoch_loss_sum += batch_sum;
            s.store.scale_grads(1.0 / bn);
            AdamConfig ac;
            ac.lr = lr;
            ac.weight_decay = cfg.weight_decay;
            adam.step(s.store, ac);
        }

        const double train_loss = epoch_loss_sum / n_train;
        double metric = std::numeric_limits<double>::quiet_NaN();
        const bool eval_now = !data.test_idx.empty() &&
                              (epoch % std::max(1, cfg.eval_every) == 0 || epoch + 1 == cfg.epochs);
        if (eval_now) {
            metric = eval_test();
            if (metric < best) {
                best = metric;
                result.best_epoch = epoch;
                best_params = s.store.flat_values();
            }
        }
        result.history.push_back({epoch, lr, train_loss, metric});
        if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch + 1) !=
            cfg.snapshot_epochs.end())
            result.snapshots.emplace_back(epoch + 1, s.store.flat_values());
        if (cfg.target_metric > 0.0 && eval_now && metric <= cfg.target_metric) break;
    }

    if (!best_params.empty()) {
        s.store.set_flat_values(best_params);
        result.best_metric = best;
    }
    return result;
}

TrainResult train_phase1_time(const TimeDataset& data, TimeSurrogate& ts, const TrainConfig& cfg) {
    if (data.train_tuples.empty()) throw ConfigError("train_phase1_time: empty training split");
    TrainResult result;
    if (cfg.epochs == 0) return result;

    const int n_train = static_cast<int>(data.train_tuples.size());
    Adam adam(ts.store.total_numel());
    Rng rng(cfg.seed);
    std::vector<int> order(static_cast<size_t>(n_train));
    for (int i = 0; i < n_train; ++i) order[static_cast<size_t>(i)] = i;

    auto eval_test = [&]() {
        const auto& test = data.test_tuples;
        const int n_slices = (static_cast<int>(test.size()) + kSliceSize - 1) / kSliceSize;
        std::vector<double> sums(static_cast<size_t>(n_slices), 0.0);
        parallel_for(n_slices, [&](int si) {
            double acc = 0.0;
            const int lo = si * kSliceSize;
            const int hi = std::min<int>(lo + kSliceSize, static_cast<int>(test.size()));
            for (int k = lo; k < hi; ++k) {
                const auto [traj, j] = test[static_cast<size_t>(k)];
                acc += eval_one_step_error(ts, data.state_at(traj, j),
                                           data.controls[static_cast<size_t>(traj)],
                                           data.state_at(traj, j + 1));
            }
            sums[static_cast<size_t>(si)] = acc;
        });
        double total = 0.0;
        for (double v : sums) total += v;
        return total / static_cast<double>(test.size());
    };

    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_params;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        fisher_yates(order, rng);
        const double lr = lr_at(epoch, cfg);
        double epoch_loss_sum = 0.0;

        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int bn = std::min(cfg.batch_size, n_train - start);
            const int n_slices = (bn + kSliceSize - 1) / kSliceSize;
            std::vector<SliceWork> work(static_cast<size_t>(n_slices));
            parallel_for(n_slices, [&](int si) {
                SliceWork& w = work[static_cast<size_t>(si)];
                w.tape = std::make_unique<Tape>();
                w.bound = ts.bind(*w.tape, true);
                const int lo = start + si * kSliceSize;
                const int hi = std::min(lo + kSliceSize, start + bn);
                Tensor total;
                for (int k = lo; k < hi; ++k) {
                    const auto [traj, j] = data.train_tuples[static_cast<size_t>(order[static_cast<size_t>(k)])];
                    Tensor li = time_tuple_loss_graph(*w.tape, ts, w.bound, data.state_at(traj, j),
                                                      data.controls[static_cast<size_t>(traj)],
                                                      data.state_at(traj, j + 1), cfg.weights);
                    total = (k == lo) ? li : add(total, li);
                }
                w.loss_sum = total.scalar();
                w.tape->backward(total);
            });
            ts.store.zero_grads();
            double batch_sum = 0.0;
            for (auto& w : work) {
                harvest_grads(w.bound, ts.store);
                batch_sum += w.loss_sum;
                w.tape.reset();
            }
            if (!std::isfinite(batch_sum))
                throw NumericalError("training diverged at epoch " + std::to_string(epoch));
            epoch_loss_sum += batch_sum;
            ts.store.scale_grads(1.0 / bn);
            AdamConfig ac;
            ac.lr = lr;
            ac.weight_decay = cfg.weight_decay;
            adam.step(ts.store, ac);
        }

        const double train_loss = epoch_loss_sum / n_train;
        double metric = std::numeric_limits<double>::quiet_NaN();
        const bool eval_now = !data.test_tuples.empty() &&
                              (epoch % std::max(1, cfg.eval_every) == 0 || epoch + 1 == cfg.epochs);
        if (eval_now) {
            metric = eval_test();
            if (metric < best) {
                best = metric;
                result.best_epoch = epoch;
                best_params = ts.store.flat_values();
            }
        }
        result.history.push_back({epoch, lr, train_loss, metric});
        if (std::find(cfg.snapshot_epochs.begin(), cfg.snapshot_epochs.end(), epoch + 1) !=
            cfg.snapshot_epochs.end())
            result.snapshots.emplace_back(epoch + 1, ts.store.flat_values());
        if (cfg.target_metric > 0.0 && eval_now && metric <= cfg.target_metric) break;
    }

    if (!best_params.empty()) {
        ts.store.set_flat_values(best_params);
        result.best_metric = best;
    }
    return result;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& history) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    FILE* f = std::fopen(tmp.c_str(), "w");
    if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
    std::fprintf(f, "epoch,lr,train_loss,test_rel_error\n");
    for (const auto& row : history)
        std::fprintf(f, "%d,%.17g,%.17g,%.17g\n", row.epoch, row.lr, row.train_loss, row.test_metric);
    std::fclose(f);
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename to '" + path + "' failed: " + ec.message());
}

}  // namespace pdectrl
