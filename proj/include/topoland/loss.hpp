#pragma once

#include <cmath>
#include <string>

#include "topoland/heatmap.hpp"
#include "topoland/network.hpp"
#include "topoland/ops.hpp"

namespace topoland {

struct LossWeights {
    double alpha = 0.1;
    double beta = 1e-4;
    double amplitude = 1e6;

    void validate() const {
        if (alpha < 0.0 || beta < 0.0 || amplitude < 0.0)
            throw ConfigError("loss weights must be non-negative");
    }
};

struct LossComponents {
    double total = 0.0;
    double reg = 0.0;         // heatmap regression term
    double it = 0.0;          // reconstruction term over missing channels
    double sigma_sq_h = 0.0;  // |sigma_h|^2
    double sigma_sq_t = 0.0;  // |sigma_t|^2
};

struct TotalLossResult {
    Tensor loss;
    LossComponents components;
};

// L = L_reg + alpha * L_it + beta * (|sigma_h|^2 + |sigma_t|^2). Targets are
// rendered here so each term always uses its matching sigma group: the
// regression target from sigma_h, the reconstruction target from sigma_t.
// head_pred may be null (no reconstruction this step); the L_it term is then
// an exact zero and the float expression is unchanged.
inline TotalLossResult total_loss(const HeatmapStack& pred, const HeatmapStack* head_pred,
                                  const LandmarkSet& landmarks, const SelectionMask* mask,
                                  const SigmaParams& sigma_h, const SigmaParams& sigma_t,
                                  const LossWeights& weights) {
    weights.validate();
    if (pred.maps.rank() < 2) throw ShapeError("total_loss: predicted stack must be [M, spatial...]");
    const std::size_t M = pred.channels();
    if (landmarks.count() != M)
        throw ShapeError("total_loss: landmark count " + std::to_string(landmarks.count()) +
                         " does not match stack channels " + std::to_string(M));
    const std::size_t d = pred.maps.rank() - 1;
    std::vector<std::size_t> dims(pred.maps.shape().begin() + 1, pred.maps.shape().end());
    const GaussianSpec spec{weights.amplitude, d};

    auto check_finite = [](double v, const char* component) {
        if (!std::isfinite(v))
            throw NumericError(std::string("total_loss: non-finite component ") + component);
    };

    auto target_reg = render_gaussian(landmarks, sigma_h, spec, dims);
    Tensor loss_reg = heatmap_mse(pred.maps, target_reg.maps, &landmarks.present);
    check_finite(loss_reg.value(), "L_reg");

    Tensor loss_it = Tensor::scalar(0.0);
    if (head_pred && mask) {
        if (head_pred->channels() != M)
            throw ShapeError("total_loss: head stack channel mismatch");
        auto target_it = render_gaussian(landmarks, sigma_t, spec, dims);
        std::vector<std::uint8_t> include = mask->missing();
        for (std::size_t i = 0; i < M; ++i) include[i] = include[i] && landmarks.present[i];
        loss_it = heatmap_mse(head_pred->maps, target_it.maps, &include);
        check_finite(loss_it.value(), "L_it");
    }

    Tensor reg_h = sigma_regularizer(sigma_h);
    Tensor reg_t = sigma_regularizer(sigma_t);
    check_finite(reg_h.value(), "|sigma_h|^2");
    check_finite(reg_t.value(), "|sigma_t|^2");

    Tensor loss = add(loss_reg, add(mul_scalar(loss_it, weights.alpha),
                                    mul_scalar(add(reg_h, reg_t), weights.beta)));
    check_finite(loss.value(), "L");

    TotalLossResult result;
    result.loss = loss;
    result.components.total = loss.value();
    result.components.reg = loss_reg.value();
    result.components.it = loss_it.value();
    result.components.sigma_sq_h = reg_h.value();
    result.components.sigma_sq_t = reg_t.value();
    return result;
}

}  // namespace topoland
