#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "qta/runner.hpp"

namespace {

std::size_t resolve_threads(std::size_t flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("QTA_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"question-type-guided attention: data generation, training, evaluation, verification"};
    app.require_subcommand(1);

    std::string config, out, data, checkpoint, report, suite, split = "test";
    std::size_t trials = 100, threads = 0;
    double eps = 1e-5;
    std::uint64_t seed = 0;
    bool seed_set = false;

    auto* gen = app.add_subcommand("gen-data", "generate synthetic routing datasets");
    gen->add_option("--config", config, "run config JSON")->required();
    gen->add_option("--out", out, "output directory")->required();
    gen->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) { seed_set = true; });

    auto* tr = app.add_subcommand("train", "train a model on <data>/train");
    tr->add_option("--config", config, "run config JSON")->required();
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--out", out, "output directory")->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--report", report, "EvalReport JSON output path")->required();
    ev->add_option("--split", split, "dataset split (default test)");
    ev->add_option("--threads", threads, "worker threads (default 1; QTA_THREADS fallback)");

    auto* ck = app.add_subcommand("check", "run a verification suite");
    ck->add_option("--suite", suite, "one of: sketch, grad, fft, mcb-oracle")->required();
    ck->add_option("--trials", trials, "random trials (default 100)");
    ck->add_option("--eps", eps, "finite-difference step (default 1e-5)");

    auto* nm = app.add_subcommand("norms", "gated-vs-raw feature norm diagnostic");
    nm->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    nm->add_option("--data", data, "dataset directory")->required();
    nm->add_option("--out", out, "NormReport CSV output path")->required();
    nm->add_option("--split", split, "dataset split (default test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : qta::runner::kExitUsage;
    }

    if (gen->parsed()) return qta::runner::cmd_gen_data(config, out, seed_set ? &seed : nullptr);
    if (tr->parsed()) return qta::runner::cmd_train(config, data, out);
    if (ev->parsed()) return qta::runner::cmd_eval(checkpoint, data, report, split, resolve_threads(threads));
    if (ck->parsed()) return qta::runner::cmd_check(suite, trials, eps);
    if (nm->parsed()) return qta::runner::cmd_norms(checkpoint, data, out, split);
    return qta::runner::kExitUsage;
}
