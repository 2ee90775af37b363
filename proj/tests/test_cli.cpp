#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>

#include "topoland/cli.hpp"

using namespace topoland;
namespace fs = std::filesystem;

#ifndef TOPOLAND_CLI_PATH
#define TOPOLAND_CLI_PATH ""
#endif

namespace {

struct Workspace {
    fs::path root;
    explicit Workspace(const std::string& name) {
        root = fs::temp_directory_path() / name;
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
    fs::path operator/(const std::string& p) const { return root / p; }
};

void write_small_gen(const fs::path& path) {
    write_file_bytes(path, R"({"dims": [48, 48], "radius_min": 2.5, "radius_max": 4.0,
        "jitter": 1.0, "contrast": 0.9, "noise": 0.02, "spacing": [1.8, 1.8]})");
}

void write_small_config(const fs::path& path, std::uint64_t iterations = 30, double alpha = 0.1) {
    nlohmann::json j{
        {"weights", {{"alpha", alpha}, {"beta", 1e-8}, {"amplitude", 1e4}}},
        {"sigma_init", 6.0},
        {"iterations", iterations},
        {"batch_size", 2},
        {"lr_base", 2e-3},
        {"lr_max", 1e-2},
        {"p_final", 0.5},
        {"folds", 3},
        {"seed", 5},
        {"arch",
         {{"scales", 3},
          {"channels", {4, 8, 16}},
          {"d", 2},
          {"residual", true},
          {"head_channels", {4, 8, 16}},
          {"head_stride", 2}}},
        {"augment", {{"noise_std", 0.03}, {"max_angle_deg", 8}}}};
    write_file_bytes(path, j.dump(2));
}

nlohmann::json manifest_without_duration(const fs::path& path) {
    auto j = nlohmann::json::parse(read_file_bytes(path));
    j.erase("duration_seconds");
    return j;
}

}  // namespace

TEST_CASE("synth is deterministic modulo the manifest duration field") {
    Workspace ws("topoland_cli_synth");
    write_small_gen(ws / "gen.json");
    cli::SynthArgs args;
    args.n = 4;
    args.seed = 11;
    args.params_json = ws / "gen.json";
    args.out = ws / "a";
    REQUIRE(cli::cmd_synth(args) == 0);
    args.out = ws / "b";
    REQUIRE(cli::cmd_synth(args) == 0);

    CHECK(manifest_without_duration(ws / "a" / "manifest.json") ==
          manifest_without_duration(ws / "b" / "manifest.json"));
    for (int i = 0; i < 4; ++i) {
        const auto id = sample_id(i);
        CHECK(read_file_bytes(ws / "a" / id / "image.tnsr") ==
              read_file_bytes(ws / "b" / id / "image.tnsr"));
        CHECK(read_file_bytes(ws / "a" / id / "mask.tnsr") ==
              read_file_bytes(ws / "b" / id / "mask.tnsr"));
        CHECK(read_file_bytes(ws / "a" / id / "landmarks.csv") ==
              read_file_bytes(ws / "b" / id / "landmarks.csv"));
    }

    // refusing a non-empty output directory without --force
    REQUIRE_THROWS_AS(cli::cmd_synth(args), ConfigError);
    args.force = true;
    REQUIRE(cli::cmd_synth(args) == 0);
}

TEST_CASE("synth rejects zero samples") {
    Workspace ws("topoland_cli_synth0");
    cli::SynthArgs args;
    args.n = 0;
    args.out = ws / "out";
    REQUIRE_THROWS_AS(cli::cmd_synth(args), ConfigError);
}

TEST_CASE("no-lit flag matches an explicit alpha of zero") {
    Workspace ws("topoland_cli_nolit");
    write_small_gen(ws / "gen.json");
    cli::SynthArgs synth;
    synth.n = 6;
    synth.seed = 3;
    synth.params_json = ws / "gen.json";
    synth.out = ws / "data";
    REQUIRE(cli::cmd_synth(synth) == 0);

    write_small_config(ws / "cfg.json", 25, 0.1);
    cli::TrainArgs a;
    a.config = ws / "cfg.json";
    a.data = ws / "data";
    a.out = ws / "run_flag";
    a.no_lit = true;
    REQUIRE(cli::cmd_train(a) == 0);

    write_small_config(ws / "cfg0.json", 25, 0.0);
    cli::TrainArgs b;
    b.config = ws / "cfg0.json";
    b.data = ws / "data";
    b.out = ws / "run_alpha0";
    REQUIRE(cli::cmd_train(b) == 0);

    CHECK(read_file_bytes(ws / "run_flag" / "model.tlck") ==
          read_file_bytes(ws / "run_alpha0" / "model.tlck"));
    CHECK(read_file_bytes(ws / "run_flag" / "trainlog.csv") ==
          read_file_bytes(ws / "run_alpha0" / "trainlog.csv"));
}

TEST_CASE("train reports a missing data directory") {
    Workspace ws("topoland_cli_nodata");
    write_small_config(ws / "cfg.json");
    cli::TrainArgs args;
    args.config = ws / "cfg.json";
    args.data = ws / "does_not_exist";
    args.out = ws / "out";
    REQUIRE_THROWS_WITH(cli::cmd_train(args), Catch::Matchers::ContainsSubstring("does_not_exist"));
}

TEST_CASE("full pipeline: train, eval, infer, apps agree") {
    Workspace ws("topoland_cli_pipeline");
    write_small_gen(ws / "gen.json");
    cli::SynthArgs synth;
    synth.n = 8;
    synth.seed = 21;
    synth.params_json = ws / "gen.json";
    synth.out = ws / "data";
    REQUIRE(cli::cmd_synth(synth) == 0);

    write_small_config(ws / "cfg.json", 400, 0.1);
    cli::TrainArgs train;
    train.config = ws / "cfg.json";
    train.data = ws / "data";
    train.out = ws / "run";
    REQUIRE(cli::cmd_train(train) == 0);

    cli::EvalArgs eval;
    eval.ckpt = ws / "run" / "model.tlck";
    eval.data = ws / "data";
    eval.out = ws / "eval";
    eval.split = "all";
    REQUIRE(cli::cmd_eval(eval) == 0);
    auto rows = read_csv(ws / "eval" / "metrics.csv");
    REQUIRE(rows[0] ==
            std::vector<std::string>{"method", "landmark", "median_mm", "mean_mm", "std_mm", "n"});
    REQUIRE(rows.size() == 6);  // L1..L4 + all
    CHECK(rows[5][1] == "all");

    // cdf parse-back is a nondecreasing distribution ending at 1
    auto cdf = read_csv(ws / "eval" / "cdf.csv");
    REQUIRE(cdf.size() >= 2);
    CHECK(std::stod(cdf.back()[1]) == 1.0);

    cli::InferArgs infer;
    infer.ckpt = ws / "run" / "model.tlck";
    infer.image = ws / "data" / "sample_0000" / "image.tnsr";
    infer.out = ws / "infer";
    infer.overlay = true;
    REQUIRE(cli::cmd_infer(infer) == 0);
    auto lm_rows = read_csv(ws / "infer" / "landmarks.csv");
    REQUIRE(lm_rows.size() == 5);  // header + 4 landmarks
    CHECK(lm_rows[0] == std::vector<std::string>{"id", "x", "y"});
    const std::string pgm = read_file_bytes(ws / "infer" / "overlay.pgm");
    REQUIRE(pgm.substr(0, 2) == "P5");

    // cross-command consistency: infer peaks equal the library's own peaks
    {
        LocalizationModel model = cli::load_model(ws / "run" / "model.tlck");
        Tensor image = load_tensor(ws / "data" / "sample_0000" / "image.tnsr");
        auto stack = model.backbone_forward(image);
        auto peaks = extract_peaks(stack, {1.0, 1.0});
        for (std::size_t i = 0; i < 4; ++i) {
            CHECK(std::stod(lm_rows[i + 1][1]) == peaks.landmarks.coords[i][0]);
            CHECK(std::stod(lm_rows[i + 1][2]) == peaks.landmarks.coords[i][1]);
        }
    }

    cli::AppsArgs apps;
    apps.ckpt = ws / "run" / "model.tlck";
    apps.sample = ws / "data" / "sample_0000";
    apps.out = ws / "apps";
    REQUIRE(cli::cmd_apps(apps) == 0);
    auto center_rows = read_csv(ws / "apps" / "centerline.csv");
    REQUIRE(center_rows.size() > 2);
    CHECK(center_rows[0] ==
          std::vector<std::string>{"index", "x", "y", "boundary_distance_voxels"});
    Tensor labels = load_tensor(ws / "apps" / "subregions.tnsr");
    Tensor mask = load_tensor(ws / "data" / "sample_0000" / "mask.tnsr");
    REQUIRE(labels.shape() == mask.shape());
    std::size_t asc = 0, arch = 0, desc = 0;
    for (std::size_t i = 0; i < labels.numel(); ++i) {
        if (mask.raw()[i] == 0.0) {
            REQUIRE(labels.raw()[i] == 0.0);
            continue;
        }
        const int v = static_cast<int>(labels.raw()[i]);
        asc += v == 1;
        arch += v == 2;
        desc += v == 3;
    }
    CHECK(asc > 0);
    CHECK(arch > 0);
    CHECK(desc > 0);

    // apps reruns are a pure function of checkpoint and sample
    cli::AppsArgs again = apps;
    again.out = ws / "apps2";
    REQUIRE(cli::cmd_apps(again) == 0);
    CHECK(read_file_bytes(ws / "apps" / "centerline.csv") ==
          read_file_bytes(ws / "apps2" / "centerline.csv"));
    CHECK(read_file_bytes(ws / "apps" / "subregions.tnsr") ==
          read_file_bytes(ws / "apps2" / "subregions.tnsr"));

    // missing mask file is a data error
    cli::AppsArgs missing = apps;
    missing.sample = ws / "eval";  // exists, but has no mask.tnsr
    missing.out = ws / "apps3";
    REQUIRE_THROWS_AS(cli::cmd_apps(missing), DataError);
}

TEST_CASE("eval rejects an empty or malformed split") {
    Workspace ws("topoland_cli_split");
    write_small_gen(ws / "gen.json");
    cli::SynthArgs synth;
    synth.n = 4;
    synth.seed = 2;
    synth.params_json = ws / "gen.json";
    synth.out = ws / "data";
    REQUIRE(cli::cmd_synth(synth) == 0);
    write_small_config(ws / "cfg.json", 4);
    cli::TrainArgs train;
    train.config = ws / "cfg.json";
    train.data = ws / "data";
    train.out = ws / "run";
    REQUIRE(cli::cmd_train(train) == 0);

    cli::EvalArgs eval;
    eval.ckpt = ws / "run" / "model.tlck";
    eval.data = ws / "data";
    eval.out = ws / "eval";
    eval.split = "banana";
    REQUIRE_THROWS_AS(cli::cmd_eval(eval), ConfigError);
    eval.split = "val:99";
    REQUIRE_THROWS_AS(cli::cmd_eval(eval), ConfigError);
}

TEST_CASE("checkpoint arch mismatch reports both shapes") {
    Workspace ws("topoland_cli_mismatch");
    write_small_gen(ws / "gen.json");
    cli::SynthArgs synth;
    synth.n = 4;
    synth.seed = 2;
    synth.params_json = ws / "gen.json";
    synth.out = ws / "data";
    REQUIRE(cli::cmd_synth(synth) == 0);
    write_small_config(ws / "cfg.json", 4);
    cli::TrainArgs train;
    train.config = ws / "cfg.json";
    train.data = ws / "data";
    train.out = ws / "run";
    REQUIRE(cli::cmd_train(train) == 0);

    // evaluate with a config describing a different architecture
    nlohmann::json j = nlohmann::json::parse(read_file_bytes(ws / "cfg.json"));
    j["arch"]["channels"] = {6, 8, 16};
    write_file_bytes(ws / "cfg_wide.json", j.dump(2));
    cli::EvalArgs eval;
    eval.ckpt = ws / "run" / "model.tlck";
    eval.config = ws / "cfg_wide.json";
    eval.data = ws / "data";
    eval.out = ws / "eval";
    REQUIRE_THROWS_WITH(cli::cmd_eval(eval), Catch::Matchers::ContainsSubstring("file has") &&
                                                 Catch::Matchers::ContainsSubstring("model expects"));
}

TEST_CASE("cli binary maps error classes onto exit codes") {
    const std::string binary = TOPOLAND_CLI_PATH;
    if (binary.empty() || !fs::exists(binary)) {
        SKIP("cli binary not available");
    }
    Workspace ws("topoland_cli_exit");
    auto run = [&](const std::string& args) {
        const std::string cmd = binary + " " + args + " > /dev/null 2>&1";
        const int status = std::system(cmd.c_str());
        return WEXITSTATUS(status);
    };
    CHECK(run("synth") == 2);                                   // missing required flags
    CHECK(run("synth --out " + (ws / "d").string() + " --n 0") == 2);
    CHECK(run("train --config /nonexistent.json --data x --out " + (ws / "o").string()) == 2);
    write_small_config(ws / "cfg.json", 4);
    CHECK(run("train --config " + (ws / "cfg.json").string() + " --data " +
              (ws / "missing").string() + " --out " + (ws / "o2").string()) == 3);
    CHECK(run("--help") == 0);
}
