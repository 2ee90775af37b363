#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "topoland/heatmap.hpp"
#include "topoland/io.hpp"
#include "topoland/ops.hpp"

namespace topoland {

struct ArchConfig {
    std::size_t scales = 5;
    std::vector<std::size_t> channels = {16, 32, 64, 128, 256};
    std::size_t d = 3;
    bool residual = true;
    std::vector<std::size_t> head_channels = {16, 32, 64};
    int head_stride = 4;

    void validate() const {
        if (channels.size() != scales)
            throw ConfigError("arch: channels list length " + std::to_string(channels.size()) +
                              " must equal scales " + std::to_string(scales));
        if (scales < 1) throw ConfigError("arch: scales must be >= 1");
        for (std::size_t c : channels)
            if (c < 1) throw ConfigError("arch: channel counts must be >= 1");
        for (std::size_t c : head_channels)
            if (c < 1) throw ConfigError("arch: head channel counts must be >= 1");
        if (head_channels.empty()) throw ConfigError("arch: head needs at least one scale");
        if (d != 2 && d != 3) throw ConfigError("arch: spatial rank must be 2 or 3");
        if (head_stride < 2) throw ConfigError("arch: head_stride must be >= 2");
    }

    std::size_t backbone_factor() const {
        std::size_t f = 1;
        for (std::size_t i = 1; i < scales; ++i) f *= 2;
        return f;
    }

    std::size_t head_factor() const {
        std::size_t f = 1;
        for (std::size_t i = 1; i < head_channels.size(); ++i) f *= static_cast<std::size_t>(head_stride);
        return f;
    }

    // Widened variant ("-L"): a fixed number of extra channels per scale.
    ArchConfig widened(std::size_t extra = 16) const {
        ArchConfig c = *this;
        for (auto& ch : c.channels) ch += extra;
        return c;
    }

    // Small 2D configuration that trains in minutes on a CPU.
    static ArchConfig desk_default() {
        ArchConfig c;
        c.scales = 3;
        c.channels = {8, 16, 32};
        c.d = 2;
        c.residual = true;
        c.head_channels = {8, 16, 32};
        c.head_stride = 2;
        return c;
    }
};

// Per-step visible/missing split produced by the selection module.
struct SelectionMask {
    std::vector<std::uint8_t> visible;
    double p = 0.0;

    std::size_t missing_count() const {
        std::size_t n = 0;
        for (auto v : visible) n += v ? 0 : 1;
        return n;
    }
    std::vector<std::uint8_t> missing() const {
        std::vector<std::uint8_t> m(visible.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = visible[i] ? 0 : 1;
        return m;
    }
};

// Raw Bernoulli draw counters, including draws from rejected all-erased
// attempts.
struct SelectionStats {
    std::vector<std::uint64_t> erase_draws;
    std::uint64_t total_attempts = 0;
    std::uint64_t redraws = 0;
};

// Independently erase each channel with probability p; an all-erased draw is
// redrawn (bounded retries, then channel 0 is kept visible).
inline std::pair<Tensor, SelectionMask> select_visible(const HeatmapStack& stack, double p, Rng& rng,
                                                       SelectionStats* stats = nullptr) {
    if (p < 0.0 || p > 1.0) throw ConfigError("select_visible: p must lie in [0, 1]");
    const std::size_t M = stack.channels();
    SelectionMask mask;
    mask.p = p;
    mask.visible.assign(M, 1);
    if (stats && stats->erase_draws.size() != M) stats->erase_draws.assign(M, 0);

    constexpr int kMaxRedraws = 16;
    for (int attempt = 0;; ++attempt) {
        bool any_visible = false;
        for (std::size_t c = 0; c < M; ++c) {
            const bool erase = rng.bernoulli(p);
            mask.visible[c] = erase ? 0 : 1;
            any_visible = any_visible || !erase;
            if (stats) stats->erase_draws[c] += erase ? 1 : 0;
        }
        if (stats) ++stats->total_attempts;
        if (any_visible) break;
        if (stats) ++stats->redraws;
        if (attempt == kMaxRedraws) {
            mask.visible[0] = 1;
            break;
        }
    }
    return {channel_mask(stack.maps, mask.visible), mask};
}

struct ParamEntry {
    std::string name;
    Tensor tensor;
    bool decay = false;      // decoupled weight decay applies
    double lr_scale = 1.0;   // relative learning rate
};

// Named parameter collection partitioned by name prefix ("backbone/...",
// "head/...", "sigma_h/...", "sigma_t/..."). Insertion order is the
// checkpoint order.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor tensor, bool decay, double lr_scale = 1.0) {
        for (const auto& e : entries_)
            if (e.name == name) throw ConfigError("duplicate parameter name " + name);
        tensor.set_requires_grad(true);
        entries_.push_back(ParamEntry{name, std::move(tensor), decay, lr_scale});
        return entries_.back().tensor;
    }

    std::vector<ParamEntry>& entries() { return entries_; }
    const std::vector<ParamEntry>& entries() const { return entries_; }

    std::size_t param_count(const std::string& group) const {
        if (group == "all") {
            std::size_t n = 0;
            for (const auto& e : entries_) n += e.tensor.numel();
            return n;
        }
        std::size_t n = 0;
        bool seen = false;
        for (const auto& e : entries_) {
            if (e.name.rfind(group + "/", 0) == 0) {
                n += e.tensor.numel();
                seen = true;
            }
        }
        if (!seen) throw ConfigError("unknown parameter group '" + group + "'");
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    std::vector<std::pair<std::string, Tensor>> checkpoint_entries() const {
        std::vector<std::pair<std::string, Tensor>> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.emplace_back(e.name, e.tensor);
        return out;
    }

    // Copies checkpoint values into the existing parameters; every entry must
    // match by name and shape.
    void load(const std::vector<std::pair<std::string, Tensor>>& ckpt) {
        if (ckpt.size() != entries_.size())
            throw DataError("checkpoint entry count " + std::to_string(ckpt.size()) +
                            " does not match model parameter count " + std::to_string(entries_.size()));
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            const auto& [name, tensor] = ckpt[i];
            auto& entry = entries_[i];
            if (name != entry.name)
                throw DataError("checkpoint entry '" + name + "' does not match expected parameter '" +
                                entry.name + "'");
            if (tensor.shape() != entry.tensor.shape())
                throw DataError("checkpoint shape mismatch for '" + name + "': file has " +
                                tensor.shape_string() + ", model expects " +
                                entry.tensor.shape_string());
            entry.tensor.data() = tensor.data();
        }
    }

private:
    std::vector<ParamEntry> entries_;
};

namespace detail {

struct ConvLayer {
    Tensor w, b;
    int stride = 1;
    int pad = 1;
    Tensor operator()(const Tensor& x) const { return conv_nd(x, w, b, stride, pad); }
};

struct NormLayer {
    Tensor gamma, beta;
    Tensor operator()(const Tensor& x) const { return instance_norm(x, gamma, beta, 1e-5); }
};

// Two 3^d convolutions with instance norm; residual variant adds the input
// back (1x1 projection when channel counts differ).
struct StageBlock {
    ConvLayer conv1, conv2;
    NormLayer norm1, norm2;
    std::optional<ConvLayer> proj;
    bool residual = true;

    Tensor operator()(const Tensor& x) const {
        Tensor h = relu(norm1(conv1(x)));
        h = norm2(conv2(h));
        if (!residual) return relu(h);
        Tensor skip = proj ? (*proj)(x) : x;
        return relu(add(h, skip));
    }
};

struct DecoderStage {
    ConvLayer reduce;  // 1x1, deep channels -> skip channels, before upsampling
    ConvLayer conv;    // 3^d fuse after concatenation
    NormLayer norm;
};

inline std::vector<std::size_t> conv_shape(std::size_t c_out, std::size_t c_in, std::size_t d,
                                           std::size_t k) {
    std::vector<std::size_t> s{c_out, c_in};
    for (std::size_t a = 0; a < d; ++a) s.push_back(k);
    return s;
}

inline Tensor he_normal(std::vector<std::size_t> shape, Rng& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.normal(0.0, std_dev);
    return t;
}

}  // namespace detail

// Unet-style encoder/decoder: per-scale stage blocks, strided-conv
// downsampling, nearest upsampling with skip concatenation, and a linear 1^d
// output layer (zero-initialized so initial predictions are flat).
class UnetModel {
public:
    UnetModel() = default;

    UnetModel(ParamStore& store, const std::string& group, std::size_t in_channels,
              std::size_t out_channels, const std::vector<std::size_t>& channels, std::size_t d,
              bool residual, int down_stride, Rng& rng)
        : d_(d), down_stride_(down_stride), in_channels_(in_channels) {
        const std::size_t S = channels.size();
        auto add_conv = [&](const std::string& name, std::size_t co, std::size_t ci, std::size_t k,
                            int stride, int pad, bool zero_init) {
            detail::ConvLayer layer;
            Tensor w = zero_init ? Tensor(detail::conv_shape(co, ci, d, k))
                                 : detail::he_normal(detail::conv_shape(co, ci, d, k), rng);
            layer.w = store.add(group + "/" + name + ".weight", std::move(w), !zero_init);
            layer.b = store.add(group + "/" + name + ".bias", Tensor({co}), false);
            layer.stride = stride;
            layer.pad = pad;
            return layer;
        };
        auto add_norm = [&](const std::string& name, std::size_t c) {
            detail::NormLayer layer;
            layer.gamma = store.add(group + "/" + name + ".gamma", Tensor({c}, 1.0), false);
            layer.beta = store.add(group + "/" + name + ".beta", Tensor({c}), false);
            return layer;
        };
        auto add_stage = [&](const std::string& name, std::size_t ci, std::size_t co) {
            detail::StageBlock blk;
            blk.residual = residual;
            blk.conv1 = add_conv(name + ".conv1", co, ci, 3, 1, 1, false);
            blk.norm1 = add_norm(name + ".norm1", co);
            blk.conv2 = add_conv(name + ".conv2", co, co, 3, 1, 1, false);
            blk.norm2 = add_norm(name + ".norm2", co);
            if (residual && ci != co) blk.proj = add_conv(name + ".proj", co, ci, 1, 1, 0, false);
            return blk;
        };

        stem_ = add_conv("stem", channels[0], in_channels, 3, 1, 1, false);
        for (std::size_t s = 0; s < S; ++s) {
            encoders_.push_back(add_stage("enc" + std::to_string(s), channels[s], channels[s]));
            if (s + 1 < S)
                downs_.push_back(add_conv("down" + std::to_string(s), channels[s + 1], channels[s], 3,
                                          down_stride, 1, false));
        }
        for (std::size_t s = S - 1; s-- > 0;) {
            detail::DecoderStage stage;
            stage.reduce =
                add_conv("dec" + std::to_string(s) + ".reduce", channels[s], channels[s + 1], 1, 1, 0,
                         false);
            stage.conv = add_conv("dec" + std::to_string(s), channels[s], 2 * channels[s], 3, 1, 1,
                                  false);
            stage.norm = add_norm("dec" + std::to_string(s) + ".norm", channels[s]);
            decoders_.push_back(stage);
        }
        final_ = add_conv("final", out_channels, channels[0], 1, 1, 0, true);
    }

    std::size_t spatial_factor() const {
        std::size_t f = 1;
        for (std::size_t i = 0; i + 1 < encoders_.size(); ++i)
            f *= static_cast<std::size_t>(down_stride_);
        return f;
    }

    Tensor forward(const Tensor& input) const {
        if (input.rank() != d_ + 1)
            throw ShapeError("model expects [C, spatial...] input of rank " + std::to_string(d_ + 1) +
                             ", got " + input.shape_string());
        if (input.dim(0) != in_channels_)
            throw ShapeError("model expects " + std::to_string(in_channels_) + " input channels, got " +
                             std::to_string(input.dim(0)));
        const std::size_t factor = spatial_factor();
        for (std::size_t a = 1; a < input.rank(); ++a)
            if (input.dim(a) % factor != 0)
                throw ShapeError("padding needed: spatial axis " + std::to_string(a - 1) + " size " +
                                 std::to_string(input.dim(a)) + " must be a multiple of " +
                                 std::to_string(factor));

        std::vector<Tensor> skips;
        Tensor h = encoders_[0](stem_(input));
        for (std::size_t s = 0; s + 1 < encoders_.size(); ++s) {
            skips.push_back(h);
            h = encoders_[s + 1](downs_[s](h));
        }
        for (std::size_t i = 0; i < decoders_.size(); ++i) {
            h = upsample_nearest(decoders_[i].reduce(h), down_stride_);
            h = concat_channels(h, skips[skips.size() - 1 - i]);
            h = relu(decoders_[i].norm(decoders_[i].conv(h)));
        }
        return final_(h);
    }

private:
    std::size_t d_ = 2;
    int down_stride_ = 2;
    std::size_t in_channels_ = 1;
    detail::ConvLayer stem_, final_;
    std::vector<detail::StageBlock> encoders_;
    std::vector<detail::ConvLayer> downs_;
    std::vector<detail::DecoderStage> decoders_;
};

// Backbone, reconstruction head, and both sigma groups behind one ParamStore.
class LocalizationModel {
public:
    LocalizationModel() = default;

    LocalizationModel(const ArchConfig& arch, std::size_t landmark_count, double sigma_init, Rng& rng)
        : arch_(arch), landmark_count_(landmark_count) {
        arch.validate();
        if (landmark_count < 1) throw ConfigError("model needs at least one landmark channel");
        backbone_ = UnetModel(params_, "backbone", 1, landmark_count, arch.channels, arch.d,
                              arch.residual, 2, rng);
        head_ = UnetModel(params_, "head", landmark_count, landmark_count, arch.head_channels, arch.d,
                          arch.residual, arch.head_stride, rng);
        sigma_h_ = SigmaParams::init(landmark_count, sigma_init, SigmaRole::Regression);
        sigma_t_ = SigmaParams::init(landmark_count, sigma_init, SigmaRole::Topology);
        // sigma learns an order of magnitude slower than conv weights to keep
        // target rendering stable; excluded from weight decay.
        sigma_h_.log_sigma = params_.add("sigma_h/log_sigma", sigma_h_.log_sigma, false, 0.1);
        sigma_t_.log_sigma = params_.add("sigma_t/log_sigma", sigma_t_.log_sigma, false, 0.1);
    }

    HeatmapStack backbone_forward(const Tensor& image) const {
        if (image.rank() != arch_.d + 1 || image.dim(0) != 1)
            throw ShapeError("backbone expects [1, spatial...] image, got " + image.shape_string());
        return HeatmapStack{backbone_.forward(image), StackKind::Predicted};
    }

    // Input must be the selection output: erased channels exactly zero and no
    // image tensor reachable from it.
    HeatmapStack head_forward(const Tensor& visible_input) const {
        if (visible_input.rank() != arch_.d + 1 || visible_input.dim(0) != landmark_count_)
            throw ShapeError("head expects [" + std::to_string(landmark_count_) +
                             ", spatial...] input, got " + visible_input.shape_string());
        return HeatmapStack{head_.forward(visible_input), StackKind::Predicted};
    }

    const ArchConfig& arch() const { return arch_; }
    std::size_t landmark_count() const { return landmark_count_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    SigmaParams& sigma_h() { return sigma_h_; }
    SigmaParams& sigma_t() { return sigma_t_; }
    const SigmaParams& sigma_h() const { return sigma_h_; }
    const SigmaParams& sigma_t() const { return sigma_t_; }

    void save(const std::filesystem::path& path) const {
        save_checkpoint(params_.checkpoint_entries(), path);
    }

    void load(const std::filesystem::path& path) { params_.load(load_checkpoint(path)); }

private:
    ArchConfig arch_;
    std::size_t landmark_count_ = 0;
    ParamStore params_;
    UnetModel backbone_, head_;
    SigmaParams sigma_h_, sigma_t_;
};

inline std::size_t param_count(const ParamStore& params, const std::string& group) {
    return params.param_count(group);
}

}  // namespace topoland
