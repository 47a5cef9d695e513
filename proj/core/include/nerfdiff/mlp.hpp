// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nerfdiff {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { relu, identity };

/// weight is (out x in), stored row-major so the flat payload reads [out][in].
template <typename T>
struct DenseLayer {
    RowMatrix<T> weight;
    Vector<T> bias;
};

/// Fully connected network; `hidden_activation` follows every layer except
/// the last, which is linear.
template <typename T>
struct Mlp {
    std::vector<DenseLayer<T>> layers;
    Activation hidden_activation = Activation::relu;

    /// dims = {in, hidden..., out}. Weights and biases are drawn from
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    static Mlp make(const std::vector<int>& dims, Activation hidden_activation, std::uint64_t seed);

    int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }

    Mlp zeros_like() const;
    bool all_finite() const;

    template <typename U>
    Mlp<U> cast() const {
        Mlp<U> out;
        out.hidden_activation = hidden_activation;
        for (const auto& l : layers) out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
        return out;
    }
};

/// Named view of one parameter tensor. `group` selects the optimizer
/// learning rate ("mlp", "triplane", ...).
template <typename T>
struct ParamView {
    std::string name;
    std::string group;
    std::vector<int> dims;
    std::span<T> values;
};

/// Views of every layer as "<prefix>.<l>.weight" / "<prefix>.<l>.bias".
template <typename T>
void append_mlp_views(Mlp<T>& mlp, const std::string& prefix, const std::string& group,
                      std::vector<ParamView<T>>& out) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        auto& layer = mlp.layers[l];
        const std::string name = prefix + "." + std::to_string(l);
        out.push_back({name + ".weight",
                       group,
                       {static_cast<int>(layer.weight.rows()), static_cast<int>(layer.weight.cols())},
                       std::span<T>(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()))});
        out.push_back({name + ".bias",
                       group,
                       {static_cast<int>(layer.bias.size())},
                       std::span<T>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()))});
    }
}

/// Read-only copies of a mutable view list.
template <typename T>
std::vector<ParamView<const T>> const_views(const std::vector<ParamView<T>>& views) {
    std::vector<ParamView<const T>> out;
    out.reserve(views.size());
    for (const auto& v : views) out.push_back({v.name, v.group, v.dims, std::span<const T>(v.values)});
    return out;
}

/// Activations retained by mlp_forward for the backward pass. Column n of
/// every matrix belongs to sample n.
template <typename T>
struct MlpCache {
    std::vector<Matrix<T>> inputs;          // input of each layer
    std::vector<Matrix<T>> pre_activations; // hidden layers only
};

/// input is (in x N); output becomes (out x N).
template <typename T>
void mlp_forward(const Mlp<T>& mlp, const Matrix<T>& input, Matrix<T>& output, MlpCache<T>& cache);

/// Accumulates parameter gradients into `grads` (same shapes as `mlp`) and, if
/// requested, writes d(loss)/d(input) to d_input.
template <typename T>
void mlp_backward(const Mlp<T>& mlp, const MlpCache<T>& cache, const Matrix<T>& d_output, Mlp<T>& grads,
                  Matrix<T>* d_input);

} // namespace nerfdiff
