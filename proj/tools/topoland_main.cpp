// Command-line entry point: dataset generation, training, evaluation,
// inference, the two downstream applications, and the paired benchmark.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric abort.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "topoland/cli.hpp"

using namespace topoland;

int main(int argc, char** argv) {
    CLI::App app{"heatmap landmark localization with a topology reconstruction head"};
    app.require_subcommand(1);

    cli::SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--out", synth.out, "output dataset directory")->required();
    synth_cmd->add_option("--n", synth.n, "number of samples")->required();
    synth_cmd->add_option("--seed", synth.seed, "master seed");
    synth_cmd->add_option("--dims", synth.dims, "volume size, e.g. 96,96 or 32,32,48");
    synth_cmd->add_option("--params", synth.params_json, "generator parameter JSON file");
    synth_cmd->add_flag("--force", synth.force, "overwrite a non-empty output directory");

    cli::TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train one model");
    train_cmd->add_option("--config", train.config, "training config JSON")->required();
    train_cmd->add_option("--data", train.data, "dataset directory")->required();
    train_cmd->add_option("--out", train.out, "output directory")->required();
    train_cmd->add_flag("--no-lit", train.no_lit, "disable the reconstruction task (alpha = 0)");
    train_cmd->add_option("--fold", train.fold,
                          "hold out this validation fold (default: train on all samples)");
    train_cmd->add_flag("--force", train.force, "overwrite a non-empty output directory");

    cli::EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    eval_cmd->add_option("--ckpt", eval.ckpt, "model checkpoint (.tlck)")->required();
    eval_cmd->add_option("--data", eval.data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval.out, "output directory")->required();
    eval_cmd->add_option("--split", eval.split, "all | train:F | val:F (default all)");
    eval_cmd->add_option("--method", eval.method, "method label for the metrics CSV");
    eval_cmd->add_option("--config", eval.config, "config JSON (default: next to the checkpoint)");
    eval_cmd->add_flag("--force", eval.force, "overwrite a non-empty output directory");

    cli::InferArgs infer;
    auto* infer_cmd = app.add_subcommand("infer", "predict landmarks for one image");
    infer_cmd->add_option("--ckpt", infer.ckpt, "model checkpoint (.tlck)")->required();
    infer_cmd->add_option("--image", infer.image, "input image (TNSR)")->required();
    infer_cmd->add_option("--out", infer.out, "output directory")->required();
    infer_cmd->add_flag("--overlay", infer.overlay, "write PGM overlays of heatmaps and peaks");
    infer_cmd->add_option("--config", infer.config, "config JSON (default: next to the checkpoint)");
    infer_cmd->add_flag("--force", infer.force, "overwrite a non-empty output directory");

    cli::AppsArgs apps;
    auto* apps_cmd = app.add_subcommand("apps", "centerline and sub-region division for one sample");
    apps_cmd->add_option("--ckpt", apps.ckpt, "model checkpoint (.tlck)")->required();
    apps_cmd->add_option("--sample", apps.sample, "sample directory (image.tnsr + mask.tnsr)")
        ->required();
    apps_cmd->add_option("--out", apps.out, "output directory")->required();
    apps_cmd->add_option("--config", apps.config, "config JSON (default: next to the checkpoint)");
    apps_cmd->add_flag("--force", apps.force, "overwrite a non-empty output directory");

    cli::BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "paired baseline-vs-LIT cross-validation report");
    bench_cmd->add_option("--config", bench.config, "training config JSON")->required();
    bench_cmd->add_option("--data", bench.data, "dataset directory")->required();
    bench_cmd->add_option("--out", bench.out, "output directory")->required();
    bench_cmd->add_flag("--force", bench.force, "overwrite a non-empty output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (synth_cmd->parsed()) return cli::cmd_synth(synth);
        if (train_cmd->parsed()) return cli::cmd_train(train);
        if (eval_cmd->parsed()) return cli::cmd_eval(eval);
        if (infer_cmd->parsed()) return cli::cmd_infer(infer);
        if (apps_cmd->parsed()) return cli::cmd_apps(apps);
        if (bench_cmd->parsed()) return cli::cmd_bench(bench);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 4;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
