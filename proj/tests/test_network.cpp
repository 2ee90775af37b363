#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "topoland/network.hpp"

using namespace topoland;

namespace {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.scales = 2;
    a.channels = {2, 3};
    a.d = 2;
    a.residual = true;
    a.head_channels = {2, 3};
    a.head_stride = 2;
    return a;
}

}  // namespace

TEST_CASE("zero image with zero-initialized final layer gives an all-zero stack") {
    Rng rng(1);
    LocalizationModel model(tiny_arch(), 3, 10.0, rng);
    Tensor image({1, 8, 8}, 0.0);
    auto stack = model.backbone_forward(image);
    REQUIRE(stack.maps.shape() == std::vector<std::size_t>{3, 8, 8});
    for (double v : stack.maps.data()) REQUIRE(v == 0.0);
}

TEST_CASE("backbone output resolution matches the input") {
    Rng rng(2);
    LocalizationModel model(ArchConfig::desk_default(), 4, 10.0, rng);
    Tensor image({1, 96, 96}, 0.1);
    auto stack = model.backbone_forward(image);
    REQUIRE(stack.maps.shape() == std::vector<std::size_t>{4, 96, 96});
}

TEST_CASE("indivisible spatial dims raise a padding-needed error") {
    Rng rng(3);
    LocalizationModel model(ArchConfig::desk_default(), 4, 10.0, rng);
    Tensor image({1, 90, 96}, 0.0);
    REQUIRE_THROWS_WITH(model.backbone_forward(image),
                        Catch::Matchers::ContainsSubstring("padding needed") &&
                            Catch::Matchers::ContainsSubstring("multiple of 4"));
}

TEST_CASE("selection with p=0 keeps everything visible") {
    Rng rng(4);
    Tensor maps({4, 6, 6}, 1.0);
    HeatmapStack stack{maps, StackKind::Predicted};
    auto [input, mask] = select_visible(stack, 0.0, rng);
    for (auto v : mask.visible) CHECK(v == 1);
    CHECK(mask.missing_count() == 0);
    for (std::size_t i = 0; i < input.numel(); ++i) CHECK(input.raw()[i] == 1.0);
}

TEST_CASE("selection erasure frequency tracks p over raw draws") {
    Rng rng(5);
    Tensor maps({4, 2, 2}, 1.0);
    HeatmapStack stack{maps, StackKind::Predicted};
    SelectionStats stats;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) (void)select_visible(stack, 0.5, rng, &stats);
    for (std::size_t c = 0; c < 4; ++c) {
        const double freq =
            static_cast<double>(stats.erase_draws[c]) / static_cast<double>(stats.total_attempts);
        INFO("channel " << c << " freq " << freq);
        CHECK(std::abs(freq - 0.5) < 0.02);
    }
    CHECK(stats.redraws > 0);  // p=0.5 with M=4 rejects ~6% of attempts
}

TEST_CASE("at least one channel stays visible under aggressive erasure") {
    Rng rng(6);
    Tensor maps({2, 2, 2}, 1.0);
    HeatmapStack stack{maps, StackKind::Predicted};
    for (int i = 0; i < 100000; ++i) {
        auto [input, mask] = select_visible(stack, 0.5, rng);
        bool any = false;
        for (auto v : mask.visible) any = any || v;
        REQUIRE(any);
    }
}

TEST_CASE("selection is reproducible from the seed") {
    Tensor maps({4, 2, 2}, 1.0);
    HeatmapStack stack{maps, StackKind::Predicted};
    Rng a(42), b(42);
    for (int i = 0; i < 200; ++i) {
        auto [ia, ma] = select_visible(stack, 0.4, a);
        auto [ib, mb] = select_visible(stack, 0.4, b);
        REQUIRE(ma.visible == mb.visible);
    }
}

TEST_CASE("head never sees the image: tape reachability") {
    Rng rng(7);
    LocalizationModel model(tiny_arch(), 3, 10.0, rng);
    Tensor image({1, 8, 8}, 0.5);
    image.set_requires_grad(true);  // give the image a tape presence

    Tape tape;
    TapeScope scope(tape);
    auto pred = model.backbone_forward(image);
    Rng sel(8);
    auto [head_input, mask] = select_visible(pred, 0.4, sel);
    auto head_out = model.head_forward(head_input);

    CHECK(tape.depends_on(pred.maps, image));
    CHECK(tape.depends_on(head_out.maps, image));  // via predicted heatmaps, by design
    // The head path depends on the image only through the visible heatmaps;
    // feeding it a detached copy of the selection output must break all
    // image reachability.
    Tensor detached = head_input.clone();
    detached.set_requires_grad(false);
    auto isolated = model.head_forward(detached);
    CHECK_FALSE(tape.depends_on(isolated.maps, image));
}

TEST_CASE("head output is invariant to the content of erased channels") {
    Rng rng(9);
    LocalizationModel model(tiny_arch(), 3, 10.0, rng);

    Tensor stack_a({3, 8, 8}, 0.0);
    Rng fill(10);
    for (auto& v : stack_a.data()) v = fill.uniform();
    Tensor stack_b = stack_a.clone();

    std::vector<std::uint8_t> visible{1, 0, 1};
    for (std::size_t i = 0; i < 64; ++i) stack_b.raw()[64 + i] += 123.0;  // perturb erased channel

    Tensor in_a = channel_mask(stack_a, visible);
    Tensor in_b = channel_mask(stack_b, visible);
    auto out_a = model.head_forward(in_a);
    auto out_b = model.head_forward(in_b);
    for (std::size_t i = 0; i < out_a.maps.numel(); ++i)
        REQUIRE(out_a.maps.raw()[i] == out_b.maps.raw()[i]);
}

TEST_CASE("head output shape matches its input shape") {
    Rng rng(11);
    LocalizationModel model(ArchConfig::desk_default(), 4, 10.0, rng);
    Tensor input({4, 96, 96}, 0.0);
    auto out = model.head_forward(input);
    REQUIRE(out.maps.shape() == std::vector<std::size_t>{4, 96, 96});

    Tensor wrong({3, 96, 96}, 0.0);
    REQUIRE_THROWS_AS(model.head_forward(wrong), ShapeError);
}

TEST_CASE("param_count of a lone convolution") {
    ParamStore store;
    store.add("backbone/solo.weight", Tensor({4, 2, 3, 3}), true);
    store.add("backbone/solo.bias", Tensor({4}), false);
    CHECK(param_count(store, "backbone") == 76);
    REQUIRE_THROWS_AS(param_count(store, "decoder"), ConfigError);
}

TEST_CASE("head overhead stays light at the reference 3D configuration") {
    Rng rng(12);
    LocalizationModel model(ArchConfig{}, 4, 10.0, rng);
    const std::size_t head = param_count(model.params(), "head");
    const std::size_t backbone = param_count(model.params(), "backbone");
    INFO("head params " << head << ", backbone params " << backbone);
    CHECK(head > 0);
    CHECK(static_cast<double>(head) / static_cast<double>(backbone) <= 0.10);
}

TEST_CASE("widened backbone strictly increases the parameter count") {
    Rng rng(13);
    LocalizationModel base(ArchConfig::desk_default(), 4, 10.0, rng);
    Rng rng2(13);
    LocalizationModel large(ArchConfig::desk_default().widened(16), 4, 10.0, rng2);
    CHECK(param_count(large.params(), "backbone") > param_count(base.params(), "backbone"));
}

TEST_CASE("checkpoint round trip preserves parameters bit-exactly") {
    Rng rng(14);
    LocalizationModel model(tiny_arch(), 3, 10.0, rng);
    const auto path = std::filesystem::temp_directory_path() / "topoland_model.tlck";
    model.save(path);

    Rng rng2(999);  // different init; load must overwrite it
    LocalizationModel other(tiny_arch(), 3, 10.0, rng2);
    other.load(path);
    const auto& a = model.params().entries();
    const auto& b = other.params().entries();
    REQUIRE(a.size() == b.size());
    for (std::size_t e = 0; e < a.size(); ++e) {
        REQUIRE(a[e].name == b[e].name);
        for (std::size_t i = 0; i < a[e].tensor.numel(); ++i)
            REQUIRE(a[e].tensor.raw()[i] == b[e].tensor.raw()[i]);
    }
    // sigma params are shared with the store: loading updates them too
    CHECK(other.sigma_h().sigma(0) == model.sigma_h().sigma(0));

    // arch mismatch reports both shapes
    Rng rng3(15);
    ArchConfig wider = tiny_arch();
    wider.channels = {3, 4};
    LocalizationModel mismatch(wider, 3, 10.0, rng3);
    REQUIRE_THROWS_WITH(mismatch.load(path), Catch::Matchers::ContainsSubstring("file has") &&
                                                 Catch::Matchers::ContainsSubstring("model expects"));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint includes both sigma groups") {
    Rng rng(16);
    LocalizationModel model(tiny_arch(), 2, 7.0, rng);
    bool has_h = false, has_t = false;
    for (const auto& e : model.params().entries()) {
        if (e.name == "sigma_h/log_sigma") has_h = true;
        if (e.name == "sigma_t/log_sigma") has_t = true;
    }
    CHECK(has_h);
    CHECK(has_t);
    CHECK(model.sigma_h().sigma(0) == Catch::Approx(7.0));
}
