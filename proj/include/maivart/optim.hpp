#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "maivart/common.hpp"
#include "maivart/tensor.hpp"

namespace maivart {

// The full training recipe: Adam with a step-decayed learning rate and
// accuracy-patience early stopping.
struct TrainConfig {
    std::size_t batch_size = 16;
    double lr0 = 0.001;
    double decay_factor = 0.9;  // multiplied in every decay_every epochs
    std::size_t decay_every = 4;
    std::size_t patience = 10;  // epochs without eval improvement before stopping
    std::size_t max_epochs = 100;
    double lambda_a = 0.5;  // auxiliary audio-head loss weight
    double lambda_v = 0.5;
    std::uint64_t seed = 42;
    double dropout_p = 0.1;  // effective train-time dropout for both encoders
    bool augment = false;    // random crop + audio time-stretch during training

    void validate() const {
        if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
        if (lr0 <= 0) throw ConfigError("train: lr0 must be positive");
        if (decay_factor <= 0 || decay_factor > 1) {
            throw ConfigError("train: decay_factor must be in (0, 1]");
        }
        if (decay_every == 0) throw ConfigError("train: decay_every must be positive");
        if (patience == 0) throw ConfigError("train: patience must be at least 1");
        if (max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
        if (lambda_a < 0 || lambda_v < 0) throw ConfigError("train: lambda weights must be >= 0");
        if (dropout_p < 0 || dropout_p >= 1) throw ConfigError("train: dropout must be in [0, 1)");
    }
};

inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.lr0 * std::pow(cfg.decay_factor,
                              static_cast<double>(epoch / cfg.decay_every));
}

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    // Moment buffers in registry order; sized lazily on the first step.
    std::vector<std::vector<real>> m, v;
};

// One bias-corrected Adam update over the registry. Gradients must already
// be populated by a backward pass.
inline void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                      double lr) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.size(), 0.0);
            state.v[i].assign(params[i].second.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adam_step: optimizer state holds " +
                            std::to_string(state.m.size()) + " tensors for " +
                            std::to_string(params.size()) + " parameters");
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].second;
        if (!p.has_grad()) {
            throw ContractError("adam_step: no gradient for parameter " + params[i].first);
        }
        if (state.m[i].size() != p.size()) {
            throw ContractError("adam_step: moment shape drifted for parameter " +
                                params[i].first);
        }
        const auto& g = p.grad();
        auto& vals = p.values();
        for (std::size_t k = 0; k < vals.size(); ++k) {
            state.m[i][k] = state.beta1 * state.m[i][k] + (1.0 - state.beta1) * g[k];
            state.v[i][k] = state.beta2 * state.v[i][k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = state.m[i][k] / bc1;
            const double vhat = state.v[i][k] / bc2;
            vals[k] -= static_cast<real>(lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace maivart
