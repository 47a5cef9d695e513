// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/mlp.hpp"

#include "nerfdiff/error.hpp"
#include "nerfdiff/random.hpp"

#include <cmath>

namespace nerfdiff {

template <typename T>
Mlp<T> Mlp<T>::make(const std::vector<int>& dims, Activation hidden_activation, std::uint64_t seed) {
    NERFDIFF_CHECK(dims.size() >= 2, "an MLP needs at least an input and an output size");
    Mlp<T> mlp;
    mlp.hidden_activation = hidden_activation;
    SplitMix rng(derive_seed(seed, 0x6d6c70));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        NERFDIFF_CHECK(dims[l] >= 1 && dims[l + 1] >= 1, "MLP layer sizes must be positive");
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        DenseLayer<T> layer{RowMatrix<T>(dims[l + 1], dims[l]), Vector<T>(dims[l + 1])};
        for (Eigen::Index k = 0; k < layer.weight.size(); ++k)
            layer.weight.data()[k] = static_cast<T>(bound * (2.0 * rng.uniform() - 1.0));
        for (Eigen::Index k = 0; k < layer.bias.size(); ++k)
            layer.bias[k] = static_cast<T>(bound * (2.0 * rng.uniform() - 1.0));
        mlp.layers.push_back(std::move(layer));
    }
    return mlp;
}

template <typename T>
Mlp<T> Mlp<T>::zeros_like() const {
    Mlp<T> out;
    out.hidden_activation = hidden_activation;
    for (const auto& l : layers)
        out.layers.push_back({RowMatrix<T>::Zero(l.weight.rows(), l.weight.cols()), Vector<T>::Zero(l.bias.size())});
    return out;
}

template <typename T>
bool Mlp<T>::all_finite() const {
    for (const auto& l : layers)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

template <typename T>
void mlp_forward(const Mlp<T>& mlp, const Matrix<T>& input, Matrix<T>& output, MlpCache<T>& cache) {
    NERFDIFF_CHECK(input.rows() == mlp.input_dim(), "MLP input has the wrong feature size");
    const std::size_t depth = mlp.layers.size();
    cache.inputs.resize(depth);
    cache.pre_activations.resize(depth - 1);
    cache.inputs[0] = input;
    for (std::size_t l = 0; l < depth; ++l) {
        const auto& layer = mlp.layers[l];
        if (l + 1 == depth) {
            output.noalias() = layer.weight * cache.inputs[l];
            output.colwise() += layer.bias;
            break;
        }
        Matrix<T>& pre = cache.pre_activations[l];
        pre.noalias() = layer.weight * cache.inputs[l];
        pre.colwise() += layer.bias;
        if (mlp.hidden_activation == Activation::relu)
            cache.inputs[l + 1] = pre.cwiseMax(T(0));
        else
            cache.inputs[l + 1] = pre;
    }
}

template <typename T>
void mlp_backward(const Mlp<T>& mlp, const MlpCache<T>& cache, const Matrix<T>& d_output, Mlp<T>& grads,
                  Matrix<T>* d_input) {
    const std::size_t depth = mlp.layers.size();
    Matrix<T> delta = d_output;
    Matrix<T> d_act;
    for (std::size_t l = depth; l-- > 0;) {
        const auto& layer = mlp.layers[l];
        auto& g = grads.layers[l];
        g.weight.noalias() += delta * cache.inputs[l].transpose();
        g.bias.noalias() += delta.rowwise().sum();
        if (l == 0 && d_input == nullptr) break;
        d_act.noalias() = layer.weight.transpose() * delta;
        if (l == 0) {
            *d_input = std::move(d_act);
            break;
        }
        if (mlp.hidden_activation == Activation::relu)
            delta = (cache.pre_activations[l - 1].array() > T(0)).select(d_act, T(0));
        else
            delta = d_act;
    }
}

template struct Mlp<float>;
template struct Mlp<double>;
template void mlp_forward(const Mlp<float>&, const Matrix<float>&, Matrix<float>&, MlpCache<float>&);
template void mlp_forward(const Mlp<double>&, const Matrix<double>&, Matrix<double>&, MlpCache<double>&);
template void mlp_backward(const Mlp<float>&, const MlpCache<float>&, const Matrix<float>&, Mlp<float>&,
                           Matrix<float>*);
template void mlp_backward(const Mlp<double>&, const MlpCache<double>&, const Matrix<double>&, Mlp<double>&,
                           Matrix<double>*);

} // namespace nerfdiff
