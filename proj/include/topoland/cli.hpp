#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "topoland/eval.hpp"
#include "topoland/train.hpp"

#ifndef TOPOLAND_VERSION
#define TOPOLAND_VERSION "0.1.0"
#endif

namespace topoland::cli {

namespace fs = std::filesystem;

// Every artifact-producing command writes exactly one manifest. The
// duration_seconds field is the only part that varies between identical
// reruns.
class ManifestWriter {
public:
    ManifestWriter(std::string command, const fs::path& out_dir)
        : out_dir_(out_dir), start_(std::chrono::steady_clock::now()) {
        manifest_["command"] = std::move(command);
        manifest_["tool_version"] = TOPOLAND_VERSION;
    }

    void set_config(const nlohmann::json& cfg) { manifest_["config"] = cfg; }
    void set_seed(std::uint64_t seed) { manifest_["seed"] = seed; }
    void add_input(const std::string& name, const fs::path& path) {
        manifest_["inputs"][name] = digest_file(path);
    }
    void add_input_digest(const std::string& name, const std::string& digest) {
        manifest_["inputs"][name] = digest;
    }
    void add_output(const fs::path& path) {
        outputs_.push_back(fs::relative(path, out_dir_).string());
    }
    void note(const std::string& key, const nlohmann::json& value) { manifest_[key] = value; }

    void write() {
        std::sort(outputs_.begin(), outputs_.end());
        manifest_["outputs"] = outputs_;
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        manifest_["duration_seconds"] =
            std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
        write_file_bytes(out_dir_ / "manifest.json", manifest_.dump(2) + "\n");
    }

private:
    fs::path out_dir_;
    nlohmann::json manifest_;
    std::vector<std::string> outputs_;
    std::chrono::steady_clock::time_point start_;
};

inline void prepare_out_dir(const fs::path& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir))
        throw ConfigError("output path " + dir.string() + " exists and is not a directory");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force)
            throw ConfigError("output directory " + dir.string() +
                              " is not empty (use --force to overwrite)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

// Digest over the dataset manifest plus every file it references.
inline std::string dataset_digest(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path))
        throw DataError("dataset directory " + dir.string() + " has no manifest.json");
    std::string all = read_file_bytes(manifest_path);
    const auto manifest = nlohmann::json::parse(all);
    for (const auto& entry : manifest.at("samples")) {
        all += read_file_bytes(dir / entry.at("image").get<std::string>());
        all += read_file_bytes(dir / entry.at("mask").get<std::string>());
        all += read_file_bytes(dir / entry.at("landmarks").get<std::string>());
    }
    return digest_hex(all);
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
    fs::path out;
    std::size_t n = 0;
    std::uint64_t seed = 1;
    std::string dims;         // optional "Y,X" or "Z,Y,X"
    fs::path params_json;     // optional GenParams overrides
    bool force = false;
};

inline int cmd_synth(const SynthArgs& args) {
    if (args.n == 0) throw ConfigError("synth: --n must be positive");
    GenParams params;
    if (!args.params_json.empty()) {
        try {
            params = gen_params_from_json(nlohmann::json::parse(read_file_bytes(args.params_json)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("synth: cannot parse --params: " + std::string(e.what()));
        }
    }
    if (!args.dims.empty()) {
        std::vector<std::size_t> dims;
        std::string cur;
        for (char ch : args.dims + ",") {
            if (ch == ',') {
                if (!cur.empty()) dims.push_back(std::stoul(cur));
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        params.dims = dims;
        if (params.spacing.size() != dims.size())
            params.spacing.assign(dims.size(), params.spacing.empty() ? 1.8 : params.spacing[0]);
        params.validate();
    }
    prepare_out_dir(args.out, args.force);
    const auto start = std::chrono::steady_clock::now();
    Dataset ds = generate_dataset(args.n, args.seed, params);
    write_dataset(ds, args.out);

    // the dataset manifest doubles as the run manifest
    auto manifest = nlohmann::json::parse(read_file_bytes(args.out / "manifest.json"));
    manifest["command"] = "synth";
    manifest["tool_version"] = TOPOLAND_VERSION;
    manifest["seed"] = args.seed;
    manifest["n"] = args.n;
    const auto elapsed = std::chrono::steady_clock::now() - start;
    manifest["duration_seconds"] =
        std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
    write_file_bytes(args.out / "manifest.json", manifest.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    fs::path config;
    fs::path data;
    fs::path out;
    bool no_lit = false;
    long fold = -1;  // -1: train on the whole dataset
    bool force = false;
};

inline TrainConfig load_train_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    try {
        return train_config_from_json(nlohmann::json::parse(read_file_bytes(path)));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("cannot parse config JSON: " + std::string(e.what()));
    }
}

inline Dataset load_dataset_checked(const fs::path& dir) {
    if (!fs::exists(dir)) throw DataError("data directory not found: " + dir.string());
    return load_dataset(dir);
}

inline int cmd_train(const TrainArgs& args) {
    TrainConfig cfg = load_train_config(args.config);
    if (args.no_lit) cfg.weights.alpha = 0.0;
    Dataset ds = load_dataset_checked(args.data);

    std::vector<std::size_t> split;
    if (args.fold >= 0) {
        const auto folds = fold_assignments(ds.size(), cfg.folds, cfg.seed);
        if (static_cast<std::size_t>(args.fold) >= folds.size())
            throw ConfigError("train: fold index out of range");
        for (std::size_t f = 0; f < folds.size(); ++f)
            if (f != static_cast<std::size_t>(args.fold))
                split.insert(split.end(), folds[f].begin(), folds[f].end());
    } else {
        split.resize(ds.size());
        for (std::size_t i = 0; i < split.size(); ++i) split[i] = i;
    }

    prepare_out_dir(args.out, args.force);
    ManifestWriter manifest("train", args.out);
    manifest.set_seed(cfg.seed);
    manifest.set_config(train_config_to_json(cfg));
    manifest.add_input("config", args.config);
    manifest.add_input_digest("data", dataset_digest(args.data));
    manifest.note("fold", args.fold);

    auto outcome = train(cfg, ds, split);
    outcome.model->save(args.out / "model.tlck");
    write_file_bytes(args.out / "model.json", train_config_to_json(cfg).dump(2) + "\n");
    write_train_log_csv(outcome.log, args.out / "trainlog.csv");
    manifest.add_output(args.out / "model.tlck");
    manifest.add_output(args.out / "model.json");
    manifest.add_output(args.out / "trainlog.csv");
    manifest.note("aborted", outcome.aborted);
    if (outcome.aborted) manifest.note("abort_reason", outcome.abort_reason);
    manifest.write();
    if (outcome.aborted) throw NumericError("training aborted: " + outcome.abort_reason +
                                            " (last-good checkpoint saved)");
    return 0;
}

// ---------------------------------------------------------------------------
// checkpoint loading shared by eval/infer/apps

inline LocalizationModel load_model(const fs::path& ckpt, const fs::path& config_override = {}) {
    if (!fs::exists(ckpt)) throw DataError("checkpoint not found: " + ckpt.string());
    fs::path cfg_path = config_override;
    if (cfg_path.empty()) {
        cfg_path = ckpt;
        cfg_path.replace_extension(".json");
        if (!fs::exists(cfg_path))
            throw ConfigError("no config next to checkpoint (" + cfg_path.string() +
                              "); pass --config");
    }
    TrainConfig cfg = load_train_config(cfg_path);
    const auto entries = load_checkpoint(ckpt);
    std::size_t landmark_count = 0;
    for (const auto& [name, tensor] : entries)
        if (name == "sigma_h/log_sigma") landmark_count = tensor.numel();
    if (landmark_count == 0)
        throw DataError("checkpoint " + ckpt.string() + " is missing sigma_h/log_sigma");
    Rng rng(0);
    LocalizationModel model(cfg.arch, landmark_count, cfg.sigma_init, rng);
    model.params().load(entries);
    return model;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    fs::path ckpt;
    fs::path data;
    fs::path out;
    std::string split = "all";
    std::string method;    // defaults from the config alpha
    fs::path config;       // optional override
    bool force = false;
};

inline std::vector<std::size_t> resolve_split(const std::string& spec, std::size_t n,
                                              const TrainConfig& cfg) {
    if (spec == "all") {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        return all;
    }
    const auto colon = spec.find(':');
    if (colon == std::string::npos)
        throw ConfigError("split spec must be 'all', 'train:F' or 'val:F', got '" + spec + "'");
    const std::string kind = spec.substr(0, colon);
    std::size_t fold = 0;
    try {
        fold = std::stoul(spec.substr(colon + 1));
    } catch (...) {
        throw ConfigError("split spec has a non-numeric fold index: '" + spec + "'");
    }
    const auto folds = fold_assignments(n, cfg.folds, cfg.seed);
    if (fold >= folds.size()) throw ConfigError("split fold index out of range");
    if (kind == "val") return folds[fold];
    if (kind == "train") {
        std::vector<std::size_t> split;
        for (std::size_t f = 0; f < folds.size(); ++f)
            if (f != fold) split.insert(split.end(), folds[f].begin(), folds[f].end());
        return split;
    }
    throw ConfigError("split spec must be 'all', 'train:F' or 'val:F', got '" + spec + "'");
}

inline int cmd_eval(const EvalArgs& args) {
    fs::path cfg_path = args.config;
    if (cfg_path.empty()) {
        cfg_path = args.ckpt;
        cfg_path.replace_extension(".json");
    }
    TrainConfig cfg = load_train_config(cfg_path);
    LocalizationModel model = load_model(args.ckpt, cfg_path);
    Dataset ds = load_dataset_checked(args.data);
    const auto indices = resolve_split(args.split, ds.size(), cfg);
    if (indices.empty()) throw DataError("eval: empty split");

    prepare_out_dir(args.out, args.force);
    ManifestWriter manifest("eval", args.out);
    manifest.set_seed(cfg.seed);
    manifest.set_config(train_config_to_json(cfg));
    manifest.add_input("ckpt", args.ckpt);
    manifest.add_input_digest("data", dataset_digest(args.data));
    manifest.note("split", args.split);

    const auto eval = evaluate_model(model, ds, indices);
    const std::string method =
        !args.method.empty() ? args.method : (cfg.weights.alpha != 0.0 ? "lit" : "baseline");
    std::vector<MetricsRow> rows;
    for (std::size_t m = 0; m < eval.per_landmark.size(); ++m)
        rows.push_back({method, "L" + std::to_string(m + 1), eval.per_landmark[m]});
    rows.push_back({method, "all", eval.pooled});
    write_metrics_csv(rows, args.out / "metrics.csv");
    cdf_export(eval.pooled, args.out / "cdf.csv");
    manifest.add_output(args.out / "metrics.csv");
    manifest.add_output(args.out / "cdf.csv");
    manifest.note("mean_error_voxels", eval.mean_error_voxels);
    manifest.note("pooled_mean_mm", eval.pooled.mean_mm);
    manifest.write();
    return 0;
}

// ---------------------------------------------------------------------------
// infer

struct InferArgs {
    fs::path ckpt;
    fs::path image;
    fs::path out;
    bool overlay = false;
    fs::path config;
    bool force = false;
};

// Binary PGM (magic P5) of one slice with heatmap contours (white, at half
// the channel peak) and a small cross at each peak (black).
inline void write_overlay_pgm(const Tensor& slice_image, const Tensor& slice_maps,
                              const std::vector<std::vector<double>>& peaks_yx,
                              const fs::path& path) {
    const std::size_t H = slice_image.dim(0), W = slice_image.dim(1);
    std::vector<unsigned char> pix(H * W);
    for (std::size_t i = 0; i < H * W; ++i)
        pix[i] = static_cast<unsigned char>(std::clamp(slice_image.raw()[i], 0.0, 1.0) * 255.0);

    const std::size_t M = slice_maps.dim(0);
    for (std::size_t c = 0; c < M; ++c) {
        const double* v = slice_maps.raw() + c * H * W;
        double peak = 0.0;
        for (std::size_t i = 0; i < H * W; ++i) peak = std::max(peak, v[i]);
        if (peak <= 0.0) continue;
        const double level = 0.5 * peak;
        for (std::size_t y = 0; y + 1 < H; ++y)
            for (std::size_t x = 0; x + 1 < W; ++x) {
                const bool a = v[y * W + x] >= level;
                if (a != (v[y * W + x + 1] >= level) || a != (v[(y + 1) * W + x] >= level))
                    pix[y * W + x] = 255;
            }
    }
    for (const auto& p : peaks_yx) {
        const long py = static_cast<long>(std::llround(p[0]));
        const long px = static_cast<long>(std::llround(p[1]));
        for (long k = -2; k <= 2; ++k) {
            if (py + k >= 0 && py + k < static_cast<long>(H) && px >= 0 && px < static_cast<long>(W))
                pix[static_cast<std::size_t>(py + k) * W + px] = 0;
            if (px + k >= 0 && px + k < static_cast<long>(W) && py >= 0 && py < static_cast<long>(H))
                pix[static_cast<std::size_t>(py) * W + px + k] = 0;
        }
    }
    std::string bytes = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    bytes.append(reinterpret_cast<const char*>(pix.data()), pix.size());
    write_file_bytes(path, bytes);
}

struct InferResult {
    LandmarkSet landmarks;
    HeatmapStack stack;
};

inline InferResult run_inference(const LocalizationModel& model, Tensor image,
                                 const std::vector<double>& spacing) {
    if (image.rank() == model.arch().d) {
        std::vector<std::size_t> shape{1};
        for (std::size_t s : image.shape()) shape.push_back(s);
        image = Tensor(shape, image.data());
    }
    auto stack = model.backbone_forward(image);
    auto peaks = extract_peaks(stack, spacing);
    return {peaks.landmarks, stack};
}

inline int cmd_infer(const InferArgs& args) {
    LocalizationModel model = load_model(args.ckpt, args.config);
    if (!fs::exists(args.image)) throw DataError("image not found: " + args.image.string());
    Tensor image = load_tensor(args.image);

    prepare_out_dir(args.out, args.force);
    ManifestWriter manifest("infer", args.out);
    manifest.add_input("ckpt", args.ckpt);
    manifest.add_input("image", args.image);

    const std::size_t d = model.arch().d;
    std::vector<double> spacing(d, 1.0);
    auto result = run_inference(model, image, spacing);
    write_landmarks_csv(result.landmarks, args.out / "landmarks.csv");
    manifest.add_output(args.out / "landmarks.csv");

    if (args.overlay) {
        Tensor img = image.rank() == d ? image : Tensor(std::vector<std::size_t>(
                                                            image.shape().begin() + 1,
                                                            image.shape().end()),
                                                        image.data());
        if (d == 2) {
            std::vector<std::vector<double>> peaks_yx = result.landmarks.coords;
            write_overlay_pgm(img, result.stack.maps, peaks_yx, args.out / "overlay.pgm");
            manifest.add_output(args.out / "overlay.pgm");
        } else {
            // one slice per distinct landmark depth
            const std::size_t H = img.dim(1), W = img.dim(2);
            std::vector<std::size_t> zs;
            for (const auto& c : result.landmarks.coords)
                zs.push_back(static_cast<std::size_t>(std::llround(c[0])));
            std::sort(zs.begin(), zs.end());
            zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
            const std::size_t M = result.landmarks.count();
            for (std::size_t z : zs) {
                Tensor slice({H, W});
                std::copy_n(img.raw() + z * H * W, H * W, slice.raw());
                Tensor maps({M, H, W});
                for (std::size_t m = 0; m < M; ++m)
                    std::copy_n(result.stack.maps.raw() + (m * img.dim(0) + z) * H * W, H * W,
                                maps.raw() + m * H * W);
                std::vector<std::vector<double>> peaks_yx;
                for (const auto& c : result.landmarks.coords)
                    if (static_cast<std::size_t>(std::llround(c[0])) == z)
                        peaks_yx.push_back({c[1], c[2]});
                const auto path = args.out / ("overlay_z" + std::to_string(z) + ".pgm");
                write_overlay_pgm(slice, maps, peaks_yx, path);
                manifest.add_output(path);
            }
        }
    }
    manifest.write();
    return 0;
}

// ---------------------------------------------------------------------------
// apps: centerline + sub-region division on one sample directory

struct AppsArgs {
    fs::path ckpt;
    fs::path sample;  // directory with image.tnsr and mask.tnsr
    fs::path out;
    fs::path config;
    bool force = false;
};

inline int cmd_apps(const AppsArgs& args) {
    LocalizationModel model = load_model(args.ckpt, args.config);
    const auto image_path = args.sample / "image.tnsr";
    const auto mask_path = args.sample / "mask.tnsr";
    if (!fs::exists(image_path))
        throw DataError("sample " + args.sample.string() + " is missing image.tnsr");
    if (!fs::exists(mask_path))
        throw DataError("sample " + args.sample.string() + " is missing mask.tnsr");
    Tensor image = load_tensor(image_path);
    Tensor mask = load_tensor(mask_path);

    prepare_out_dir(args.out, args.force);
    ManifestWriter manifest("apps", args.out);
    manifest.add_input("ckpt", args.ckpt);
    manifest.add_input("image", image_path);
    manifest.add_input("mask", mask_path);

    const std::size_t d = model.arch().d;
    std::vector<double> spacing(d, 1.0);
    InferResult inferred;
    try {
        inferred = run_inference(model, image, spacing);
    } catch (const std::runtime_error& e) {
        throw DataError("sample " + args.sample.string() + ": " + e.what());
    }
    if (inferred.landmarks.count() < 4)
        throw DataError("sample " + args.sample.string() +
                        ": applications need 4 landmarks, model predicts " +
                        std::to_string(inferred.landmarks.count()));

    Centerline line;
    SubregionLabels labels;
    try {
        line = extract_centerline(mask, inferred.landmarks.coords[0], inferred.landmarks.coords[3],
                                  spacing);
        labels = subdivide(mask, line, inferred.landmarks.coords[1], inferred.landmarks.coords[2]);
    } catch (const DataError& e) {
        throw DataError("sample " + args.sample.string() + ": " + e.what());
    }

    write_landmarks_csv(inferred.landmarks, args.out / "landmarks.csv");
    std::string csv = d == 3 ? "index,x,y,z,boundary_distance_voxels\n"
                             : "index,x,y,boundary_distance_voxels\n";
    for (std::size_t i = 0; i < line.size(); ++i) {
        csv += std::to_string(i);
        for (std::size_t a = 0; a < d; ++a) csv += "," + std::to_string(line.points[i][a]);
        csv += "," + format_double(line.boundary_distance[i]) + "\n";
    }
    write_file_bytes(args.out / "centerline.csv", csv);
    save_tensor(labels.labels, args.out / "subregions.tnsr");
    manifest.add_output(args.out / "landmarks.csv");
    manifest.add_output(args.out / "centerline.csv");
    manifest.add_output(args.out / "subregions.tnsr");
    manifest.note("arc_length_mm", line.arc_length_mm);
    manifest.note("arch_empty", labels.arch_empty);
    manifest.note("ascending_voxels", labels.count(Subregion::Ascending));
    manifest.note("arch_voxels", labels.count(Subregion::Arch));
    manifest.note("descending_voxels", labels.count(Subregion::Descending));
    manifest.write();
    return 0;
}

// ---------------------------------------------------------------------------
// bench: paired baseline vs LIT cross-validation

struct BenchArgs {
    fs::path config;
    fs::path data;
    fs::path out;
    bool force = false;
};

inline int cmd_bench(const BenchArgs& args) {
    TrainConfig cfg = load_train_config(args.config);
    if (cfg.weights.alpha == 0.0)
        throw ConfigError("bench: config alpha must be positive (the baseline sets it to zero)");
    Dataset ds = load_dataset_checked(args.data);

    prepare_out_dir(args.out, args.force);
    ManifestWriter manifest("bench", args.out);
    manifest.set_seed(cfg.seed);
    manifest.set_config(train_config_to_json(cfg));
    manifest.add_input("config", args.config);
    manifest.add_input_digest("data", dataset_digest(args.data));

    TrainConfig baseline_cfg = cfg;
    baseline_cfg.weights.alpha = 0.0;

    auto lit = crossvalidate(cfg, ds);
    auto baseline = crossvalidate(baseline_cfg, ds);

    // parameter accounting from the first fold's model
    const auto& params = lit.folds.front().train_outcome.model->params();
    const std::size_t head_params = param_count(params, "head");
    const std::size_t backbone_params = param_count(params, "backbone");

    std::string fold_csv = "fold,method,median_mm,mean_mm,std_mm,n\n";
    nlohmann::json report;
    report["folds"] = nlohmann::json::array();
    std::size_t lit_wins = 0;
    for (std::size_t f = 0; f < lit.folds.size(); ++f) {
        const auto& lf = lit.folds[f].eval.pooled;
        const auto& bf = baseline.folds[f].eval.pooled;
        fold_csv += std::to_string(f) + ",baseline," + format_double(bf.median_mm) + "," +
                    format_double(bf.mean_mm) + "," + format_double(bf.std_mm) + "," +
                    std::to_string(bf.count) + "\n";
        fold_csv += std::to_string(f) + ",lit," + format_double(lf.median_mm) + "," +
                    format_double(lf.mean_mm) + "," + format_double(lf.std_mm) + "," +
                    std::to_string(lf.count) + "\n";
        if (lf.mean_mm <= bf.mean_mm) ++lit_wins;
        report["folds"].push_back({{"fold", f},
                                   {"baseline_mean_mm", bf.mean_mm},
                                   {"lit_mean_mm", lf.mean_mm},
                                   {"baseline_median_mm", bf.median_mm},
                                   {"lit_median_mm", lf.median_mm},
                                   {"validation_samples", lit.folds[f].validation.size()},
                                   {"lit_mean_voxels", lit.folds[f].eval.mean_error_voxels},
                                   {"baseline_mean_voxels", baseline.folds[f].eval.mean_error_voxels}});
    }
    report["pooled"] = {{"baseline_mean_mm", baseline.pooled.mean_mm},
                        {"lit_mean_mm", lit.pooled.mean_mm},
                        {"baseline_median_mm", baseline.pooled.median_mm},
                        {"lit_median_mm", lit.pooled.median_mm}};
    report["lit_wins"] = lit_wins;
    report["param_count_backbone"] = backbone_params;
    report["param_count_head"] = head_params;
    report["head_overhead_ratio"] =
        static_cast<double>(head_params) / static_cast<double>(backbone_params);

    write_file_bytes(args.out / "fold_report.csv", fold_csv);
    write_file_bytes(args.out / "report.json", report.dump(2) + "\n");
    manifest.add_output(args.out / "fold_report.csv");
    manifest.add_output(args.out / "report.json");

    const auto cfg_json = train_config_to_json(cfg).dump(2) + "\n";
    const auto baseline_json = train_config_to_json(baseline_cfg).dump(2) + "\n";
    for (std::size_t f = 0; f < lit.folds.size(); ++f) {
        const auto tag = "fold" + std::to_string(f);
        lit.folds[f].train_outcome.model->save(args.out / (tag + "_lit.tlck"));
        baseline.folds[f].train_outcome.model->save(args.out / (tag + "_baseline.tlck"));
        write_file_bytes(args.out / (tag + "_lit.json"), cfg_json);
        write_file_bytes(args.out / (tag + "_baseline.json"), baseline_json);
        write_train_log_csv(lit.folds[f].train_outcome.log, args.out / (tag + "_lit_trainlog.csv"));
        write_train_log_csv(baseline.folds[f].train_outcome.log,
                            args.out / (tag + "_baseline_trainlog.csv"));
        manifest.add_output(args.out / (tag + "_lit.tlck"));
        manifest.add_output(args.out / (tag + "_baseline.tlck"));
    }
    manifest.write();
    return 0;
}

}  // namespace topoland::cli
