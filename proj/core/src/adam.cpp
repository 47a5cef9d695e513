// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/adam.hpp"

#include "nerfdiff/error.hpp"

#include <algorithm>
#include <cmath>

namespace nerfdiff {

double AdamConfig::lr_for(const std::string& group) const {
    const auto it = group_lr.find(group);
    return it == group_lr.end() ? default_lr : it->second;
}

template <typename T>
double global_norm(const std::vector<ParamView<const T>>& grads) {
    double sum = 0.0;
    for (const auto& g : grads)
        for (T v : g.values) sum += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sum);
}

template <typename T>
void Adam<T>::step(const std::vector<ParamView<T>>& params, const std::vector<ParamView<const T>>& grads) {
    NERFDIFF_CHECK(params.size() == grads.size(), "adam: parameter and gradient lists differ");
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p.values.size(), T(0));
            v_.emplace_back(p.values.size(), T(0));
        }
    }
    NERFDIFF_CHECK(m_.size() == params.size(), "adam: parameter list changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
        NERFDIFF_CHECK(params[k].values.size() == grads[k].values.size() && m_[k].size() == params[k].values.size(),
                       "adam: shape mismatch for " + params[k].name);
        for (T g : grads[k].values)
            if (!std::isfinite(g)) throw Error("adam: non-finite gradient in " + params[k].name);
    }
    double scale = 1.0;
    if (config_.clip_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
    }
    ++step_;
    const T b1 = static_cast<T>(config_.beta1);
    const T b2 = static_cast<T>(config_.beta2);
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const T eps = static_cast<T>(config_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double lr = config_.lr_for(params[k].group);
        const T step_size = static_cast<T>(lr / c1);
        const T inv_c2 = static_cast<T>(1.0 / c2);
        T* p = params[k].values.data();
        const T* g = grads[k].values.data();
        T* m = m_[k].data();
        T* v = v_[k].data();
        const T gs = static_cast<T>(scale);
        for (std::size_t i = 0; i < m_[k].size(); ++i) {
            const T gi = g[i] * gs;
            m[i] = b1 * m[i] + (T(1) - b1) * gi;
            v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
            if (lr != 0.0) p[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
}

template <typename T>
void ema_update(const std::vector<ParamView<T>>& ema, const std::vector<ParamView<const T>>& params, double decay) {
    NERFDIFF_CHECK(ema.size() == params.size(), "ema_update: parameter lists differ");
    NERFDIFF_CHECK(decay >= 0.0 && decay <= 1.0, "ema_update: decay must lie in [0, 1]");
    const T d = static_cast<T>(decay);
    const T rest = static_cast<T>(1.0 - decay);
    for (std::size_t k = 0; k < ema.size(); ++k) {
        NERFDIFF_CHECK(ema[k].values.size() == params[k].values.size(), "ema_update: shape mismatch");
        for (std::size_t i = 0; i < ema[k].values.size(); ++i)
            ema[k].values[i] = d * ema[k].values[i] + rest * params[k].values[i];
    }
}

template <typename T>
void zero_views(const std::vector<ParamView<T>>& views) {
    for (const auto& v : views) std::fill(v.values.begin(), v.values.end(), T(0));
}

template class Adam<float>;
template class Adam<double>;
template double global_norm(const std::vector<ParamView<const float>>&);
template double global_norm(const std::vector<ParamView<const double>>&);
template void ema_update(const std::vector<ParamView<float>>&, const std::vector<ParamView<const float>>&, double);
template void ema_update(const std::vector<ParamView<double>>&, const std::vector<ParamView<const double>>&, double);
template void zero_views(const std::vector<ParamView<float>>&);
template void zero_views(const std::vector<ParamView<double>>&);

} // namespace nerfdiff
