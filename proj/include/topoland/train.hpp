#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "topoland/eval.hpp"
#include "topoland/loss.hpp"
#include "topoland/network.hpp"
#include "topoland/optim.hpp"
#include "topoland/synth.hpp"

namespace topoland {

struct AugmentParams {
    double noise_std = 0.05;
    double max_angle_deg = 10.0;
};

struct TrainConfig {
    LossWeights weights;
    double sigma_init = 10.0;
    std::uint64_t iterations = 2000;
    std::size_t batch_size = 2;
    double lr_base = 2e-3;
    double lr_max = 1e-2;
    std::uint64_t lr_cycle = 0;  // 0 resolves to iterations / 4
    double p_final = 0.5;
    std::size_t folds = 5;
    std::uint64_t seed = 1;
    ArchConfig arch = ArchConfig::desk_default();
    AugmentParams augment;

    std::uint64_t resolved_lr_cycle() const {
        if (lr_cycle > 0) return lr_cycle;
        return iterations >= 4 ? iterations / 4 : 1;
    }

    void validate() const {
        weights.validate();
        arch.validate();
        if (iterations == 0) throw ConfigError("config: iterations must be positive");
        if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
        if (p_final < 0.0 || p_final > 1.0) throw ConfigError("config: p_final must lie in [0, 1]");
        if (lr_base > lr_max) throw ConfigError("config: lr_base must not exceed lr_max");
        if (!(sigma_init > 0.0)) throw ConfigError("config: sigma_init must be positive");
        if (folds == 0) throw ConfigError("config: folds must be positive");
        if (augment.noise_std < 0.0 || augment.max_angle_deg < 0.0)
            throw ConfigError("config: augmentation parameters must be non-negative");
    }
};

namespace detail {

inline void collect_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                 const std::string& prefix, std::vector<std::string>& offending) {
    if (!j.is_object()) return;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : known)
            if (it.key() == k) ok = true;
        if (!ok) offending.push_back(prefix.empty() ? it.key() : prefix + "." + it.key());
    }
}

}  // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    std::vector<std::string> offending;
    detail::collect_unknown_keys(j,
                                 {"weights", "sigma_init", "iterations", "batch_size", "lr_base",
                                  "lr_max", "lr_cycle", "p_final", "folds", "seed", "arch", "augment"},
                                 "", offending);
    if (j.contains("weights"))
        detail::collect_unknown_keys(j["weights"], {"alpha", "beta", "amplitude"}, "weights",
                                     offending);
    if (j.contains("arch"))
        detail::collect_unknown_keys(
            j["arch"], {"scales", "channels", "d", "residual", "head_channels", "head_stride"}, "arch",
            offending);
    if (j.contains("augment"))
        detail::collect_unknown_keys(j["augment"], {"noise_std", "max_angle_deg"}, "augment",
                                     offending);
    if (!offending.empty()) {
        std::string list;
        for (const auto& k : offending) list += (list.empty() ? "" : ", ") + k;
        throw ConfigError("config: unknown keys: " + list);
    }

    TrainConfig cfg;
    try {
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            if (w.contains("alpha")) cfg.weights.alpha = w["alpha"].get<double>();
            if (w.contains("beta")) cfg.weights.beta = w["beta"].get<double>();
            if (w.contains("amplitude")) cfg.weights.amplitude = w["amplitude"].get<double>();
        }
        if (j.contains("sigma_init")) cfg.sigma_init = j["sigma_init"].get<double>();
        if (j.contains("iterations")) cfg.iterations = j["iterations"].get<std::uint64_t>();
        if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("lr_base")) cfg.lr_base = j["lr_base"].get<double>();
        if (j.contains("lr_max")) cfg.lr_max = j["lr_max"].get<double>();
        if (j.contains("lr_cycle")) cfg.lr_cycle = j["lr_cycle"].get<std::uint64_t>();
        if (j.contains("p_final")) cfg.p_final = j["p_final"].get<double>();
        if (j.contains("folds")) cfg.folds = j["folds"].get<std::size_t>();
        if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("arch")) {
            const auto& a = j["arch"];
            if (a.contains("scales")) cfg.arch.scales = a["scales"].get<std::size_t>();
            if (a.contains("channels")) cfg.arch.channels = a["channels"].get<std::vector<std::size_t>>();
            if (a.contains("d")) cfg.arch.d = a["d"].get<std::size_t>();
            if (a.contains("residual")) cfg.arch.residual = a["residual"].get<bool>();
            if (a.contains("head_channels"))
                cfg.arch.head_channels = a["head_channels"].get<std::vector<std::size_t>>();
            if (a.contains("head_stride")) cfg.arch.head_stride = a["head_stride"].get<int>();
        }
        if (j.contains("augment")) {
            const auto& a = j["augment"];
            if (a.contains("noise_std")) cfg.augment.noise_std = a["noise_std"].get<double>();
            if (a.contains("max_angle_deg")) cfg.augment.max_angle_deg = a["max_angle_deg"].get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: invalid value type: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["weights"] = {{"alpha", cfg.weights.alpha},
                    {"beta", cfg.weights.beta},
                    {"amplitude", cfg.weights.amplitude}};
    j["sigma_init"] = cfg.sigma_init;
    j["iterations"] = cfg.iterations;
    j["batch_size"] = cfg.batch_size;
    j["lr_base"] = cfg.lr_base;
    j["lr_max"] = cfg.lr_max;
    j["lr_cycle"] = cfg.resolved_lr_cycle();
    j["p_final"] = cfg.p_final;
    j["folds"] = cfg.folds;
    j["seed"] = cfg.seed;
    j["arch"] = {{"scales", cfg.arch.scales},           {"channels", cfg.arch.channels},
                 {"d", cfg.arch.d},                     {"residual", cfg.arch.residual},
                 {"head_channels", cfg.arch.head_channels}, {"head_stride", cfg.arch.head_stride}};
    j["augment"] = {{"noise_std", cfg.augment.noise_std}, {"max_angle_deg", cfg.augment.max_angle_deg}};
    return j;
}

inline double cyclic_lr(std::uint64_t iter, const TrainConfig& cfg) {
    return cyclic_lr(iter, cfg.lr_base, cfg.lr_max, cfg.resolved_lr_cycle());
}

struct TrainRecord {
    std::uint64_t iter = 0;
    double lr = 0.0;
    double p = 0.0;
    LossComponents loss;
    std::vector<double> sigma_h;
    std::vector<double> sigma_t;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    std::uint64_t resolved_lr_cycle = 0;
};

// TrainLog CSV: iter,lr,p,L,L_reg,L_it,sigma_h_1..M,sigma_t_1..M
inline void write_train_log_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::string out = "iter,lr,p,L,L_reg,L_it";
    const std::size_t M = log.records.empty() ? 0 : log.records.front().sigma_h.size();
    for (std::size_t i = 1; i <= M; ++i) out += ",sigma_h_" + std::to_string(i);
    for (std::size_t i = 1; i <= M; ++i) out += ",sigma_t_" + std::to_string(i);
    out += "\n";
    for (const auto& r : log.records) {
        out += std::to_string(r.iter) + "," + format_double(r.lr) + "," + format_double(r.p) + "," +
               format_double(r.loss.total) + "," + format_double(r.loss.reg) + "," +
               format_double(r.loss.it);
        for (double v : r.sigma_h) out += "," + format_double(v);
        for (double v : r.sigma_t) out += "," + format_double(v);
        out += "\n";
    }
    write_file_bytes(path, out);
}

struct TrainOptions {
    // Compute the reconstruction path even when alpha == 0. The trajectory is
    // bitwise-identical either way; training skips the dead computation by
    // default.
    bool force_head_compute = false;
};

struct TrainOutcome {
    std::shared_ptr<LocalizationModel> model;
    TrainLog log;
    bool aborted = false;
    std::string abort_reason;
};

// One full training run: sample batch -> augment -> backbone -> selection ->
// head -> render targets with the current sigmas -> composite loss ->
// backward -> optimizer step under the cyclic schedule. Fully determined by
// cfg.seed; selection draws are consumed whether or not the reconstruction
// term is active, so toggling alpha never shifts any other stream.
inline TrainOutcome train(const TrainConfig& cfg, const Dataset& dataset,
                          const std::vector<std::size_t>& train_indices,
                          const TrainOptions& options = {}) {
    cfg.validate();
    if (dataset.size() == 0) throw DataError("train: empty dataset");
    if (train_indices.empty()) throw DataError("train: empty training split");
    for (std::size_t i : train_indices)
        if (i >= dataset.size()) throw DataError("train: split index out of range");
    const std::size_t M = dataset.samples.front().landmarks.count();

    Rng init_rng = Rng::derive(cfg.seed, Stream::Init);
    Rng batch_rng = Rng::derive(cfg.seed, Stream::BatchSampling);
    Rng aug_rng = Rng::derive(cfg.seed, Stream::Augmentation);
    Rng sel_rng = Rng::derive(cfg.seed, Stream::Selection);

    TrainOutcome outcome;
    outcome.model = std::make_shared<LocalizationModel>(cfg.arch, M, cfg.sigma_init, init_rng);
    outcome.log.resolved_lr_cycle = cfg.resolved_lr_cycle();
    LocalizationModel& model = *outcome.model;
    AdamW optimizer(model.params());

    const bool head_active = cfg.weights.alpha != 0.0 || options.force_head_compute;

    for (std::uint64_t iter = 0; iter < cfg.iterations; ++iter) {
        const double lr = cyclic_lr(iter, cfg);
        const double p = erasure_schedule(iter, cfg.iterations, cfg.p_final);
        model.params().zero_grads();
        LossComponents mean{};
        try {
            for (std::size_t b = 0; b < cfg.batch_size; ++b) {
                const std::size_t idx = train_indices[batch_rng.uniform_index(train_indices.size())];
                SyntheticSample sample = augment(dataset.samples[idx], aug_rng,
                                                 cfg.augment.noise_std, cfg.augment.max_angle_deg);
                Tape tape;
                TapeScope scope(tape);
                auto pred = model.backbone_forward(sample.image);
                auto [head_input, mask] = select_visible(pred, p, sel_rng);
                HeatmapStack head_pred;
                if (head_active) head_pred = model.head_forward(head_input);
                auto result = total_loss(pred, head_active ? &head_pred : nullptr, sample.landmarks,
                                         &mask, model.sigma_h(), model.sigma_t(), cfg.weights);
                Tensor scaled = mul_scalar(result.loss, 1.0 / static_cast<double>(cfg.batch_size));
                tape.backward(scaled);
                const double w = 1.0 / static_cast<double>(cfg.batch_size);
                mean.total += w * result.components.total;
                mean.reg += w * result.components.reg;
                mean.it += w * result.components.it;
                mean.sigma_sq_h += w * result.components.sigma_sq_h;
                mean.sigma_sq_t += w * result.components.sigma_sq_t;
            }
            optimizer.step(model.params(), lr);
        } catch (const NumericError& e) {
            outcome.aborted = true;
            outcome.abort_reason = std::string(e.what()) + " at iteration " + std::to_string(iter);
            break;
        }
        TrainRecord rec;
        rec.iter = iter;
        rec.lr = lr;
        rec.p = p;
        rec.loss = mean;
        rec.sigma_h = model.sigma_h().sigmas();
        rec.sigma_t = model.sigma_t().sigmas();
        outcome.log.records.push_back(std::move(rec));
    }
    return outcome;
}

struct ModelEvaluation {
    ErrorSummary pooled;                      // all landmarks of all samples
    std::vector<ErrorSummary> per_landmark;   // one summary per landmark id
    std::vector<double> pooled_errors_mm;     // raw values behind `pooled`
    double mean_error_voxels = 0.0;           // spacing-free counterpart
};

// Clean-image peak errors of the backbone on a dataset split.
inline ModelEvaluation evaluate_model(const LocalizationModel& model, const Dataset& dataset,
                                      const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw DataError("evaluate: empty split");
    const std::size_t M = dataset.samples.front().landmarks.count();
    std::vector<std::vector<double>> per_landmark(M);
    std::vector<double> pooled;
    double voxel_sum = 0.0;
    std::size_t voxel_n = 0;
    for (std::size_t i : indices) {
        if (i >= dataset.size()) throw DataError("evaluate: split index out of range");
        const auto& sample = dataset.samples[i];
        auto stack = model.backbone_forward(sample.image);
        auto peaks = extract_peaks(stack, sample.landmarks.spacing);
        const auto errors = localization_error(peaks.landmarks, sample.landmarks);
        for (std::size_t m = 0; m < M; ++m) {
            per_landmark[m].push_back(errors[m]);
            pooled.push_back(errors[m]);
            double vox = 0.0;
            for (std::size_t a = 0; a < sample.landmarks.dims(); ++a) {
                const double dv = peaks.landmarks.coords[m][a] - sample.landmarks.coords[m][a];
                vox += dv * dv;
            }
            voxel_sum += std::sqrt(vox);
            ++voxel_n;
        }
    }
    ModelEvaluation eval;
    eval.pooled = error_summary(pooled);
    eval.pooled_errors_mm = std::move(pooled);
    for (auto& v : per_landmark) eval.per_landmark.push_back(error_summary(v));
    eval.mean_error_voxels = voxel_sum / static_cast<double>(voxel_n);
    return eval;
}

// Deterministic function of (seed, dataset size, folds): shuffled indices in
// balanced contiguous blocks; every sample lands in exactly one validation
// fold.
inline std::vector<std::vector<std::size_t>> fold_assignments(std::size_t n, std::size_t folds,
                                                              std::uint64_t seed) {
    if (folds < 2) throw ConfigError("crossvalidate: folds must be >= 2");
    if (n < folds) throw DataError("crossvalidate: dataset smaller than fold count");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = Rng::derive(seed, Stream::FoldSplit);
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> out(folds);
    const std::size_t base = n / folds;
    const std::size_t rem = n % folds;
    std::size_t cursor = 0;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t len = base + (f < rem ? 1 : 0);
        out[f].assign(order.begin() + cursor, order.begin() + cursor + len);
        cursor += len;
    }
    return out;
}

inline std::uint64_t fold_seed(std::uint64_t master, std::size_t fold) {
    std::uint64_t s = master ^ (0xa0761d6478bd642fULL * (fold + 1));
    return splitmix64(s);
}

struct FoldOutcome {
    std::size_t fold = 0;
    std::vector<std::size_t> validation;
    TrainOutcome train_outcome;
    ModelEvaluation eval;
};

struct CrossValidationResult {
    std::vector<FoldOutcome> folds;
    ErrorSummary pooled;  // validation errors pooled over folds
};

// Each sample appears in exactly one validation fold; folds may run as
// parallel jobs (TOPOLAND_THREADS) and are merged in fold order either way.
inline CrossValidationResult crossvalidate(const TrainConfig& cfg, const Dataset& dataset,
                                           const TrainOptions& options = {}) {
    const auto folds = fold_assignments(dataset.size(), cfg.folds, cfg.seed);
    CrossValidationResult result;
    result.folds.resize(folds.size());

    const int budget = std::min<int>(thread_budget(), static_cast<int>(folds.size()));
    auto run_fold = [&](std::size_t f) {
        std::vector<std::size_t> training;
        for (std::size_t g = 0; g < folds.size(); ++g)
            if (g != f) training.insert(training.end(), folds[g].begin(), folds[g].end());
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = fold_seed(cfg.seed, f);
        FoldOutcome out;
        out.fold = f;
        out.validation = folds[f];
        out.train_outcome = train(fold_cfg, dataset, training, options);
        if (out.train_outcome.aborted)
            throw NumericError("fold " + std::to_string(f) + ": " + out.train_outcome.abort_reason);
        out.eval = evaluate_model(*out.train_outcome.model, dataset, folds[f]);
        result.folds[f] = std::move(out);
    };

    if (budget <= 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
    } else {
        std::vector<std::exception_ptr> errors(folds.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&]() {
            while (true) {
                const std::size_t f = next.fetch_add(1);
                if (f >= folds.size()) return;
                try {
                    run_fold(f);
                } catch (...) {
                    errors[f] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> threads;
        for (int t = 0; t < budget; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    std::vector<double> pooled;
    for (const auto& fold : result.folds)
        pooled.insert(pooled.end(), fold.eval.pooled_errors_mm.begin(),
                      fold.eval.pooled_errors_mm.end());
    result.pooled = error_summary(pooled);
    return result;
}

}  // namespace topoland
