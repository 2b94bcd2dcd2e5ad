// Command-line front end: dataset generation, phase-1 training, phase-2
// control search, the adjoint baseline, method comparison tables, and the
// operator-error bound verifier.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pdectrl/bench.hpp"
#include "pdectrl/errors.hpp"
#include "pdectrl/threading.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    int seed = -1;
    int threads = 0;
    std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration file")->required();
    cmd->add_option("--set", args.overrides, "override: section.key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "override the configured seeds");
    cmd->add_option("--threads", args.threads, "worker threads (default: PDECTRL_THREADS or all cores)");
    cmd->add_option("--out", args.out_dir, "output directory (default: out)");
}

pdectrl::RunConfig load_config(const CommonArgs& args) {
    pdectrl::RunConfig cfg = pdectrl::RunConfig::from_file(args.config_path);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (args.seed >= 0) {
        cfg.apply_override("phase1.seed=" + std::to_string(args.seed));
        cfg.apply_override("compare.seed=" + std::to_string(args.seed));
    }
    if (args.threads > 0) pdectrl::set_num_threads(args.threads);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pdectrl - PDE-constrained optimal control via operator surrogates"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, control_args, adjoint_args, compare_args, bound_args;
    CLI::App* gen = app.add_subcommand("gen-data", "generate a dataset container");
    add_common(gen, gen_args);
    CLI::App* train = app.add_subcommand("train", "phase-1 surrogate training");
    add_common(train, train_args);
    CLI::App* control = app.add_subcommand("control", "phase-2 control search through a checkpoint");
    add_common(control, control_args);
    CLI::App* adjoint = app.add_subcommand("adjoint", "adjoint-baseline control search");
    add_common(adjoint, adjoint_args);
    CLI::App* compare = app.add_subcommand("compare", "surrogate vs adjoint comparison table");
    add_common(compare, compare_args);
    CLI::App* bound = app.add_subcommand("verify-bound", "operator-error bound verifier");
    add_common(bound, bound_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    }

    try {
        if (gen->parsed()) {
            pdectrl::run_gen_data(load_config(gen_args), gen_args.out_dir);
        } else if (train->parsed()) {
            auto out = pdectrl::run_train(load_config(train_args), train_args.out_dir);
            std::printf("checkpoint: %s (best test metric %.6g at epoch %d)\n",
                        out.checkpoint_path.c_str(), out.result.best_metric, out.result.best_epoch);
        } else if (control->parsed()) {
            pdectrl::run_control(load_config(control_args), control_args.out_dir);
        } else if (adjoint->parsed()) {
            pdectrl::run_adjoint(load_config(adjoint_args), adjoint_args.out_dir);
        } else if (compare->parsed()) {
            pdectrl::run_compare(load_config(compare_args), compare_args.out_dir);
        } else if (bound->parsed()) {
            if (!pdectrl::run_verify_bound(load_config(bound_args), bound_args.out_dir)) return 3;
        }
    } catch (const pdectrl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const pdectrl::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const pdectrl::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
