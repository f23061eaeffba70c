#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "cloudkd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cloudkd;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out;
};

RunConfig load_config(const GlobalArgs& args) {
    RunConfig cfg =
        args.config_path.empty() ? RunConfig::defaults() : RunConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (!args.out.empty()) cfg.out = args.out;
    cfg.validate();
    return cfg;
}

void add_global_flags(CLI::App* cmd, GlobalArgs& args) {
    cmd->add_option("--config", args.config_path, "Run configuration file (key = value)");
    cmd->add_option("--seed", args.seed, "Override the config seed");
    cmd->add_option("--out", args.out, "Override the output directory");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cloudkd - compact cloud-segmentation U-Nets via knowledge distillation"};
    app.require_subcommand(1);

    GlobalArgs args;

    auto* prepare = app.add_subcommand("prepare", "Build a prepared dataset directory");
    add_global_flags(prepare, args);
    bool synthetic = false;
    std::string raw_dir;
    prepare->add_flag("--synthetic", synthetic, "Generate the bundled synthetic dataset");
    prepare->add_option("--raw", raw_dir, "Directory of raw CBSK/CMSK pairs");

    auto* train_teacher =
        app.add_subcommand("train-teacher", "Train the teacher with the plain CE loss");
    add_global_flags(train_teacher, args);

    auto* export_logits =
        app.add_subcommand("export-logits", "Precompute teacher logits for every train patch");
    add_global_flags(export_logits, args);

    auto* distill_cmd =
        app.add_subcommand("distill", "Train the student against labels + teacher responses");
    add_global_flags(distill_cmd, args);

    auto* predict = app.add_subcommand("predict", "Run tiled inference and write CMSK masks");
    add_global_flags(predict, args);
    std::string pred_input, pred_weights;
    bool postproc_on = false, postproc_off = false;
    predict->add_option("--input", pred_input, "Scene split directory (default <data>/test)");
    predict->add_option("--weights", pred_weights, "Weights file (default student weights)");
    predict->add_flag("--postproc", postproc_on, "Force adaptive post-processing on");
    predict->add_flag("--no-postproc", postproc_off, "Force adaptive post-processing off");

    auto* evaluate = app.add_subcommand("evaluate", "Score predictions against ground truth");
    add_global_flags(evaluate, args);
    std::string eval_pred, eval_gt;
    evaluate->add_option("--pred", eval_pred, "Predicted masks (default <out>/pred)");
    evaluate->add_option("--gt", eval_gt, "Ground-truth split (default <data>/test)");

    auto* benchmark = app.add_subcommand("benchmark", "Measure inference throughput");
    add_global_flags(benchmark, args);
    std::string bench_weights, bench_data;
    benchmark->add_option("--weights", bench_weights, "Weights file (default student weights)");
    benchmark->add_option("--data", bench_data, "Scene split (default <data>/test)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg = load_config(args);

        if (prepare->parsed()) {
            PrepareOptions opts;
            opts.synthetic = synthetic;
            opts.raw_dir = raw_dir;
            if (!opts.synthetic && opts.raw_dir.empty())
                throw ConfigError("prepare: pass --synthetic or --raw DIR");
            fs::path data = cmd_prepare(cfg, opts);
            std::cout << "prepared dataset at " << data.string() << "\n";
        } else if (train_teacher->parsed()) {
            fs::path w = cmd_train_teacher(cfg);
            std::cout << "teacher weights at " << w.string() << "\n";
        } else if (export_logits->parsed()) {
            fs::path dir = cmd_export_logits(cfg);
            std::cout << "teacher logits at " << dir.string() << "\n";
        } else if (distill_cmd->parsed()) {
            fs::path w = cmd_distill(cfg);
            std::cout << "student weights at " << w.string() << "\n";
        } else if (predict->parsed()) {
            if (postproc_on) cfg.postproc_enabled = true;
            if (postproc_off) cfg.postproc_enabled = false;
            fs::path input = pred_input.empty() ? cfg.data_dir() / "test" : fs::path(pred_input);
            fs::path weights = pred_weights.empty() ? cfg.out / "student" / "weights.cwgt"
                                                    : fs::path(pred_weights);
            fs::path dir = cmd_predict(cfg, input, weights);
            std::cout << "predicted masks at " << dir.string() << "\n";
        } else if (evaluate->parsed()) {
            fs::path pred = eval_pred.empty() ? cfg.out / "pred" : fs::path(eval_pred);
            fs::path gt = eval_gt.empty() ? cfg.data_dir() / "test" : fs::path(eval_gt);
            EvaluateResult r = cmd_evaluate(cfg, pred, gt);
            std::cout << "reports at " << r.per_scene_csv.parent_path().string() << "\n";
        } else if (benchmark->parsed()) {
            fs::path weights = bench_weights.empty() ? cfg.out / "student" / "weights.cwgt"
                                                     : fs::path(bench_weights);
            fs::path data = bench_data.empty() ? cfg.data_dir() / "test" : fs::path(bench_data);
            fs::path report = cmd_benchmark(cfg, weights, data);
            std::cout << "benchmark report at " << report.string() << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
