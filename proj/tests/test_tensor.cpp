#include <gtest/gtest.h>

#include "alen/ops.hpp"
#include "test_util.hpp"

using namespace alen;
using alen::testing::random;

TEST(Tensor, FactoryRejectsWrongLength) {
    EXPECT_THROW(Tensor<float>::from_data({1, 1, 2, 2}, {1.0f, 2.0f}), DimensionError);
}

TEST(Tensor, SumGradientIsOnes) {
    auto x = random<double>({2, 3, 4, 5}, 1, -1, 1, true);
    ops::sum(x).backward();
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tensor, SquareGradientIsTwoX) {
    auto x = random<double>({1, 2, 3, 3}, 2, -1, 1, true);
    ops::sum(ops::mul(x, x)).backward();
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(Tensor, FanOutAccumulates) {
    auto x = Tensor<double>::from_data({1, 1, 1, 2}, {1.5, -2.0}, true);
    auto y = ops::add(ops::scale(x, 3.0), ops::scale(x, 4.0));
    ops::sum(y).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 7.0);
}

TEST(Tensor, LeafGradientsAccumulateAcrossGraphs) {
    auto x = Tensor<double>::from_data({1, 1, 1, 1}, {2.0}, true);
    ops::sum(ops::scale(x, 3.0)).backward();
    ops::sum(ops::scale(x, 3.0)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardOnNonScalarIsUsageError) {
    auto x = random<double>({1, 1, 2, 2}, 3, -1, 1, true);
    EXPECT_THROW(ops::scale(x, 2.0).backward(), UsageError);
}

TEST(Tensor, SecondBackwardIsRejected) {
    auto x = random<double>({1, 1, 2, 2}, 4, -1, 1, true);
    auto loss = ops::sum(ops::relu(x));
    loss.backward();
    EXPECT_THROW(loss.backward(), UsageError);
}

TEST(Tensor, ReusingConsumedIntermediateIsRejected) {
    auto x = random<double>({1, 1, 2, 2}, 4, -1, 1, true);
    auto mid = ops::scale(x, 2.0);
    ops::sum(mid).backward();
    EXPECT_THROW(ops::sum(mid), UsageError);
}

TEST(Tensor, NoGraphWithoutRequiresGrad) {
    auto x = random<float>({1, 1, 2, 2}, 5);
    auto y = ops::relu(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.node()->inputs.empty());
    EXPECT_THROW(ops::sum(y).backward(), UsageError);
}

TEST(Tensor, MutableDataOnlyOnLeaves) {
    auto x = random<float>({1, 1, 2, 2}, 6, -1, 1, true);
    EXPECT_NO_THROW(x.mutable_data());
    EXPECT_THROW(ops::relu(x).mutable_data(), UsageError);
}

TEST(Tensor, CastPreservesValues) {
    auto x = random<float>({1, 2, 2, 2}, 7);
    auto y = x.cast<double>();
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(static_cast<double>(x.data()[i]), y.data()[i]);
}
