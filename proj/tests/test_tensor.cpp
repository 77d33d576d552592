#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "affect/error.hpp"
#include "affect/rng.hpp"
#include "affect/tensor.hpp"
#include "gradcheck.hpp"

using namespace affect;
using affect::testing::max_gradient_error;
using affect::testing::random_tensor;
using affect::testing::weighted_sum;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, RejectsMismatchedShape) {
    EXPECT_THROW(Tensor::from({2, 3}, std::vector<double>(5)), DimensionError);
    EXPECT_THROW(Tensor::zeros({0, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(values(matmul(eye, b)), values(b));
}

TEST(Matmul, TwoByTwoHandProduct) {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 3});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos) << e.what();
    }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
    Rng rng(1);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 4}, rng, false);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(matmul(a, b)));
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t p = 0; p < 3; ++p) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 4; ++j) expect += b.at(p, j);
            EXPECT_DOUBLE_EQ(a.grad()[i * 3 + p], expect);
        }
}

TEST(Softmax, UniformInputGivesUniformOutput) {
    auto y = values(softmax_lastdim(Tensor::from({3}, {0, 0, 0})));
    for (double v : y) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
    auto y = values(softmax_lastdim(Tensor::from({2}, {1000, 0})));
    EXPECT_DOUBLE_EQ(y[0], 1.0);
    EXPECT_GE(y[1], 0.0);
    EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, MatchesDirectExpOracle) {
    const std::vector<double> in{1, 2, 3};
    double z = 0.0;
    for (double v : in) z += std::exp(v);
    auto y = values(softmax_lastdim(Tensor::from({3}, in)));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], std::exp(in[i]) / z, 1e-15);
    EXPECT_NEAR(y[0], 0.09003057, 1e-8);
    EXPECT_NEAR(y[1], 0.24472847, 1e-8);
    EXPECT_NEAR(y[2], 0.66524096, 1e-8);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng.below(5), n = 1 + rng.below(5);
        Tensor x = random_tensor({rows, n}, rng, false);
        auto y = values(softmax_lastdim(x));
        const double c = rng.uniform(-50, 50);
        std::vector<double> shifted(x.data().begin(), x.data().end());
        for (double& v : shifted) v += c;
        auto ys = values(softmax_lastdim(Tensor::from({rows, n}, shifted)));
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                s += y[r * n + j];
                EXPECT_GE(y[r * n + j], 0.0);
                EXPECT_NEAR(ys[r * n + j], y[r * n + j], 1e-12);
            }
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }
}

TEST(Conv1dTemporal, IdentityKernelCopiesInput) {
    Rng rng(3);
    Tensor x = random_tensor({5, 3}, rng, false);
    Tensor w = Tensor::from({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b = Tensor::zeros({3});
    EXPECT_EQ(values(conv1d_temporal(x, w, b)), values(x));
}

TEST(Conv1dTemporal, HandConvolvedZeroPadding) {
    Tensor x = Tensor::from({3, 1}, {1, 2, 3});
    Tensor w = Tensor::from({3, 1, 1}, {1, 1, 1});
    EXPECT_EQ(values(conv1d_temporal(x, w, Tensor::zeros({1}))), (std::vector<double>{3, 6, 5}));
}

TEST(Conv1dTemporal, ZeroInputGivesBias) {
    Rng rng(4);
    Tensor w = random_tensor({3, 2, 4}, rng, false);
    Tensor b = Tensor::from({4}, {0.5, -1, 2, 3});
    auto y = values(conv1d_temporal(Tensor::zeros({6, 2}), w, b));
    for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t o = 0; o < 4; ++o) EXPECT_EQ(y[t * 4 + o], b.data()[o]);
}

TEST(Conv1dTemporal, EvenKernelIsConfigError) {
    EXPECT_THROW(conv1d_temporal(Tensor::zeros({3, 1}), Tensor::zeros({2, 1, 1}), Tensor::zeros({1})), ConfigError);
}

TEST(Conv1dTemporal, LinearInInput) {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t T = 1 + rng.below(5), d_in = 1 + rng.below(4), d_out = 1 + rng.below(4);
        const std::size_t k = 1 + 2 * rng.below(3);
        Tensor w = random_tensor({k, d_in, d_out}, rng, false);
        Tensor zero_b = Tensor::zeros({d_out});
        Tensor x1 = random_tensor({T, d_in}, rng, false);
        Tensor x2 = random_tensor({T, d_in}, rng, false);
        const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
        auto lhs = values(conv1d_temporal(add(scale(x1, alpha), scale(x2, beta)), w, zero_b));
        auto f1 = values(conv1d_temporal(x1, w, zero_b));
        auto f2 = values(conv1d_temporal(x2, w, zero_b));
        for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * f1[i] + beta * f2[i], 1e-10);
    }
}

TEST(ElementwiseOps, ReluClampsNegatives) {
    EXPECT_EQ(values(relu(Tensor::from({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
}

TEST(ElementwiseOps, LayerNormOfConstantIsBeta) {
    Tensor gamma = Tensor::from({4}, {2, 2, 2, 2});
    Tensor beta = Tensor::from({4}, {0.1, 0.2, 0.3, 0.4});
    auto y = values(layer_norm_lastdim(Tensor::filled({1, 4}, 7.0), gamma, beta));
    EXPECT_EQ(y, values(beta));
}

TEST(ElementwiseOps, ConcatLastDimShapeLaw) {
    Tensor y = concat_lastdim({Tensor::zeros({4, 2}), Tensor::filled({4, 3}, 1.0)});
    EXPECT_EQ(y.shape(), (Shape{4, 5}));
    EXPECT_EQ(y.at(2, 1), 0.0);
    EXPECT_EQ(y.at(2, 2), 1.0);
}

TEST(ElementwiseOps, ShapeMismatchIsDimensionError) {
    EXPECT_THROW(add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
    EXPECT_THROW(concat_lastdim({Tensor::zeros({2, 2}), Tensor::zeros({3, 2})}), DimensionError);
    EXPECT_THROW(softmax_lastdim(Tensor::scalar(1.0)), DimensionError);
}

TEST(Backward, SumGivesOnes) {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(x));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, SquareGivesTwiceInput) {
    Tensor x = Tensor::from({3}, {1, -2, 0.5}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum_all(mul(x, x)));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, -4, 1}));
}

TEST(Backward, GradientsAccumulateAcrossUses) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(add(sum_all(x), sum_all(scale(x, 3.0))));
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, 4}));
}

TEST(Backward, NonScalarLossIsContractError) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, ClearedTapeInvalidatesNodes) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(x);
    tape.clear();
    EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, LossFromOtherTapeIsContractError) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tape other;
    Tensor loss;
    {
        TapeScope scope(other);
        loss = sum_all(x);
    }
    Tape tape;
    EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, NoTapeMeansNoRecording) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    Tensor y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(Backward, BitIdenticalAcrossRuns) {
    Rng rng(11);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({3, 3}, rng);
    auto run = [&] {
        x.zero_grad();
        w.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        tape.backward(weighted_sum(softmax_lastdim(matmul(x, w))));
        return std::make_pair(std::vector<double>(x.grad().begin(), x.grad().end()),
                              std::vector<double>(w.grad().begin(), w.grad().end()));
    };
    EXPECT_EQ(run(), run());
}

// Finite-difference checks over every differentiable op on random small tensors.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    Rng rng(1000 + static_cast<std::uint64_t>(GetParam()));
    const std::size_t T = 1 + rng.below(5), n = 1 + rng.below(5), m = 1 + rng.below(5);
    Tensor a = random_tensor({T, n}, rng);
    Tensor b = random_tensor({T, n}, rng);
    Tensor w = random_tensor({n, m}, rng);
    Tensor bias = random_tensor({n}, rng);
    Tensor gamma = random_tensor({n}, rng);
    Tensor beta = random_tensor({n}, rng);
    const std::size_t k = 1 + 2 * rng.below(3);
    Tensor cw = random_tensor({k, n, m}, rng);
    Tensor cb = random_tensor({m}, rng);
    const std::size_t s0 = rng.below(T), s1 = rng.below(n);

    const double tol = 1e-6;
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(matmul(a, w)); }, {a, w}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(transpose(a)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(add(a, b)); }, {a, b}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(sub(a, b)); }, {a, b}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(mul(a, b)); }, {a, b}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(scale(a, -1.7)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(add_bias(a, bias)); }, {a, bias}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(concat_lastdim({a, b, a})); }, {a, b}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(slice_time(a, s0, T - s0)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(slice_lastdim(a, s1, n - s1)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return mean_all(mul(a, a)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(relu(a)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(tanh_elem(a)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(softmax_lastdim(a)); }, {a}), tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(layer_norm_lastdim(a, gamma, beta)); }, {a, gamma, beta}),
              tol);
    EXPECT_LT(max_gradient_error([&] { return weighted_sum(conv1d_temporal(a, cw, cb)); }, {a, cw, cb}), tol);
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 20));
