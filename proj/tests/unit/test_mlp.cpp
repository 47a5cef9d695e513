// Copyright Contributors to the nerfdiff project
// SPDX-License-Identifier: Apache-2.0
#include "nerfdiff/error.hpp"
#include "nerfdiff/mlp.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace nerfdiff;

namespace {

// Plain loops, no Eigen products.
std::vector<double> reference_forward(const Mlp<double>& mlp, std::vector<double> x) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        const auto& layer = mlp.layers[l];
        std::vector<double> y(static_cast<std::size_t>(layer.weight.rows()));
        for (Eigen::Index o = 0; o < layer.weight.rows(); ++o) {
            double acc = layer.bias[o];
            for (Eigen::Index i = 0; i < layer.weight.cols(); ++i)
                acc += layer.weight(o, i) * x[static_cast<std::size_t>(i)];
            const bool hidden = l + 1 < mlp.layers.size();
            y[static_cast<std::size_t>(o)] =
                hidden && mlp.hidden_activation == Activation::relu ? std::max(acc, 0.0) : acc;
        }
        x = std::move(y);
    }
    return x;
}

double loss_of(const Mlp<double>& mlp, const Matrix<double>& input, const Matrix<double>& weights) {
    Matrix<double> out;
    MlpCache<double> cache;
    mlp_forward(mlp, input, out, cache);
    return (out.array() * weights.array()).sum();
}

} // namespace

TEST(Mlp, ShapesAndInitBounds) {
    const auto mlp = Mlp<double>::make({5, 7, 3}, Activation::relu, 3);
    ASSERT_EQ(mlp.layers.size(), 2u);
    EXPECT_EQ(mlp.input_dim(), 5);
    EXPECT_EQ(mlp.output_dim(), 3);
    EXPECT_EQ(mlp.layers[0].weight.rows(), 7);
    EXPECT_EQ(mlp.layers[0].weight.cols(), 5);
    const double bound = 1.0 / std::sqrt(5.0);
    EXPECT_LE(mlp.layers[0].weight.cwiseAbs().maxCoeff(), bound);
    EXPECT_TRUE(mlp.all_finite());
    EXPECT_THROW(Mlp<double>::make({5}, Activation::relu, 1), Error);
}

TEST(Mlp, SameSeedSameWeights) {
    const auto a = Mlp<float>::make({4, 8, 2}, Activation::relu, 9);
    const auto b = Mlp<float>::make({4, 8, 2}, Activation::relu, 9);
    const auto c = Mlp<float>::make({4, 8, 2}, Activation::relu, 10);
    EXPECT_EQ(a.layers[0].weight, b.layers[0].weight);
    EXPECT_NE(a.layers[0].weight, c.layers[0].weight);
}

TEST(Mlp, ForwardMatchesReferenceLoops) {
    for (Activation act : {Activation::relu, Activation::identity}) {
        const auto mlp = Mlp<double>::make({6, 9, 9, 4}, act, 21);
        Matrix<double> input = Matrix<double>::Random(6, 13);
        Matrix<double> out;
        MlpCache<double> cache;
        mlp_forward(mlp, input, out, cache);
        ASSERT_EQ(out.rows(), 4);
        ASSERT_EQ(out.cols(), 13);
        for (Eigen::Index n = 0; n < input.cols(); ++n) {
            std::vector<double> x(input.col(n).data(), input.col(n).data() + 6);
            const auto ref = reference_forward(mlp, x);
            for (int o = 0; o < 4; ++o) EXPECT_NEAR(out(o, n), ref[static_cast<std::size_t>(o)], 1e-12);
        }
    }
}

TEST(Mlp, WrongInputSizeThrows) {
    const auto mlp = Mlp<double>::make({3, 4, 2}, Activation::relu, 1);
    Matrix<double> input = Matrix<double>::Zero(4, 2), out;
    MlpCache<double> cache;
    EXPECT_THROW(mlp_forward(mlp, input, out, cache), Error);
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    auto mlp = Mlp<double>::make({5, 8, 3}, Activation::relu, 4);
    Matrix<double> input = Matrix<double>::Random(5, 6);
    Matrix<double> weights = Matrix<double>::Random(3, 6);
    Matrix<double> out;
    MlpCache<double> cache;
    mlp_forward(mlp, input, out, cache);
    auto grads = mlp.zeros_like();
    Matrix<double> d_input;
    mlp_backward(mlp, cache, weights, grads, &d_input);

    const double h = 1e-6;
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
        auto& w = mlp.layers[l].weight;
        for (Eigen::Index k = 0; k < w.size(); ++k) {
            const double keep = w.data()[k];
            w.data()[k] = keep + h;
            const double up = loss_of(mlp, input, weights);
            w.data()[k] = keep - h;
            const double down = loss_of(mlp, input, weights);
            w.data()[k] = keep;
            EXPECT_NEAR(grads.layers[l].weight.data()[k], (up - down) / (2 * h), 1e-6);
        }
        auto& b = mlp.layers[l].bias;
        for (Eigen::Index k = 0; k < b.size(); ++k) {
            const double keep = b[k];
            b[k] = keep + h;
            const double up = loss_of(mlp, input, weights);
            b[k] = keep - h;
            const double down = loss_of(mlp, input, weights);
            b[k] = keep;
            EXPECT_NEAR(grads.layers[l].bias[k], (up - down) / (2 * h), 1e-6);
        }
    }
    for (Eigen::Index k = 0; k < input.size(); ++k) {
        Matrix<double> probe = input;
        probe.data()[k] += h;
        const double up = loss_of(mlp, probe, weights);
        probe.data()[k] -= 2 * h;
        const double down = loss_of(mlp, probe, weights);
        EXPECT_NEAR(d_input.data()[k], (up - down) / (2 * h), 1e-6);
    }
}

TEST(Mlp, BackwardAccumulates) {
    const auto mlp = Mlp<double>::make({3, 4, 2}, Activation::identity, 8);
    Matrix<double> input = Matrix<double>::Random(3, 5), out;
    MlpCache<double> cache;
    mlp_forward(mlp, input, out, cache);
    Matrix<double> d_out = Matrix<double>::Random(2, 5);
    auto once = mlp.zeros_like();
    auto twice = mlp.zeros_like();
    mlp_backward<double>(mlp, cache, d_out, once, nullptr);
    mlp_backward<double>(mlp, cache, d_out, twice, nullptr);
    mlp_backward<double>(mlp, cache, d_out, twice, nullptr);
    EXPECT_LT((twice.layers[0].weight - 2.0 * once.layers[0].weight).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mlp, ParameterViewsCoverEveryTensor) {
    auto mlp = Mlp<float>::make({3, 4, 2}, Activation::relu, 8);
    std::vector<ParamView<float>> views;
    append_mlp_views(mlp, "net", "mlp", views);
    ASSERT_EQ(views.size(), 4u);
    EXPECT_EQ(views[0].name, "net.0.weight");
    EXPECT_EQ(views[3].name, "net.1.bias");
    EXPECT_EQ(views[0].dims, (std::vector<int>{4, 3}));
    views[1].values[2] = 5.0f;
    EXPECT_EQ(mlp.layers[0].bias[2], 5.0f);
    // Row-major payload: element (o, i) sits at o * in + i.
    EXPECT_EQ(views[0].values[1 * 3 + 2], mlp.layers[0].weight(1, 2));
    const auto cv = const_views(views);
    EXPECT_EQ(cv[3].values.data(), views[3].values.data());
}

TEST(Mlp, CastPreservesValues) {
    const auto mlp = Mlp<double>::make({3, 4, 2}, Activation::relu, 2);
    const auto f = mlp.cast<float>();
    EXPECT_FLOAT_EQ(f.layers[1].weight(1, 3), static_cast<float>(mlp.layers[1].weight(1, 3)));
    EXPECT_EQ(f.hidden_activation, mlp.hidden_activation);
}
