// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nerfdiff/mlp.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace nerfdiff {

struct AdamConfig {
    /// Learning rate per parameter group; groups not listed use `default_lr`.
    std::map<std::string, double> group_lr;
    double default_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Global-norm gradient clipping threshold; 0 disables clipping.
    double clip_norm = 0.0;

    double lr_for(const std::string& group) const;
};

/**
 * Bias-corrected Adam over a fixed list of parameter tensors. The first call
 * to step() sizes the moment buffers; later calls must pass views of the
 * same shapes in the same order.
 */
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(std::move(config)) {}

    /// Throws Error on non-finite gradients before touching any parameter.
    void step(const std::vector<ParamView<T>>& params, const std::vector<ParamView<const T>>& grads);

    std::int64_t step_count() const { return step_; }
    const AdamConfig& config() const { return config_; }
    const std::vector<std::vector<T>>& first_moments() const { return m_; }
    const std::vector<std::vector<T>>& second_moments() const { return v_; }

private:
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

/// L2 norm over all gradient tensors.
template <typename T>
double global_norm(const std::vector<ParamView<const T>>& grads);

/// ema <- decay * ema + (1 - decay) * params, tensor by tensor.
template <typename T>
void ema_update(const std::vector<ParamView<T>>& ema, const std::vector<ParamView<const T>>& params, double decay);

/// Sets every value of every tensor to zero.
template <typename T>
void zero_views(const std::vector<ParamView<T>>& views);

} // namespace nerfdiff
