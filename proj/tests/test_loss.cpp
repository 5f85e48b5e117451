#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alen/loss.hpp"
#include "test_util.hpp"

using namespace alen;
using alen::testing::random;

TEST(L1Loss, Examples) {
    auto x = random<double>({1, 3, 4, 4}, 1);
    EXPECT_EQ(l1_loss(x, x).item(), 0.0);
    EXPECT_EQ(l1_loss(Tensor<double>::full({1, 3, 4, 4}, 1.0), Tensor<double>::zeros({1, 3, 4, 4})).item(), 1.0);
    EXPECT_THROW(l1_loss(x, random<double>({1, 3, 4, 5}, 2)), DimensionError);
}

TEST(L1Loss, MatchesFlatLoop) {
    auto a = random<float>({2, 3, 7, 5}, 3, 0, 1);
    auto b = random<float>({2, 3, 7, 5}, 4, 0, 1);
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(double(a.data()[i]) - double(b.data()[i]));
    EXPECT_NEAR(l1_loss(a, b).item(), acc / static_cast<double>(a.numel()), 1e-6);
}

TEST(Ssim, IdentityIsOne) {
    auto x = random<double>({2, 3, 16, 16}, 5, 0, 1);
    EXPECT_NEAR(ssim_metric(x, x).item(), 1.0, 1e-12);
    auto xf = random<float>({1, 3, 16, 16}, 6, 0, 1);
    EXPECT_NEAR(ssim_value(xf, xf), 1.0, 1e-12);
}

TEST(Ssim, ConstantImagesFollowScalarFormula) {
    auto x = Tensor<double>::full({1, 3, 16, 16}, 0.5);
    auto y = Tensor<double>::full({1, 3, 16, 16}, 0.25);
    const double c1 = 1e-4;
    const double expected = (2 * 0.125 + c1) / (0.3125 + c1);
    auto map = ssim_map(x, y);
    EXPECT_EQ(map.shape(), (Shape{1, 3, 6, 6}));
    for (double v : map.data()) EXPECT_NEAR(v, expected, 1e-12);
    EXPECT_NEAR(ssim_metric(x, y).item(), expected, 1e-12);
}

TEST(Ssim, SymmetricAndBounded) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto a = random<double>({1, 3, 24, 20}, 10 + seed, 0, 1);
        auto b = random<double>({1, 3, 24, 20}, 20 + seed, 0, 1);
        EXPECT_NEAR(ssim_metric(a, b).item(), ssim_metric(b, a).item(), 1e-6);
        const auto map = ssim_map(a, b);
        for (double v : map.data()) {
            EXPECT_GT(v, -1.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

TEST(Ssim, SmallImageRejected) {
    auto x = random<double>({1, 1, 10, 16}, 1);
    EXPECT_THROW(ssim_metric(x, x), InputError);
    LossConfig bad;
    bad.ssim_window = 4;
    EXPECT_THROW(ssim_metric(random<double>({1, 1, 16, 16}, 1), random<double>({1, 1, 16, 16}, 2), bad), ConfigError);
}

TEST(CombinedLoss, ArithmeticFixture) {
    EXPECT_EQ(combine_terms(0.1, 0.8, 0.85), 0.115);
    EXPECT_EQ(combine_terms(0.3, 0.4, 1.0), 0.3);
    EXPECT_DOUBLE_EQ(combine_terms(0.3, 0.4, 0.0), 0.6);
}

TEST(CombinedLoss, IdenticalInputsGiveZero) {
    auto x = random<double>({1, 3, 16, 16}, 7, 0, 1);
    EXPECT_NEAR(combined_loss(x, x).item(), 0.0, 1e-12);
}

TEST(CombinedLoss, MatchesTermsAndLimits) {
    auto a = random<double>({1, 3, 16, 16}, 8, 0, 1);
    auto b = random<double>({1, 3, 16, 16}, 9, 0, 1);
    const double l1 = l1_loss(a, b).item(), s = ssim_metric(a, b).item();
    LossConfig cfg;
    EXPECT_NEAR(combined_loss(a, b, cfg).item(), combine_terms(l1, s, 0.85), 1e-12);
    cfg.alpha = 1.0;
    EXPECT_NEAR(combined_loss(a, b, cfg).item(), l1, 1e-12);
    cfg.alpha = 0.0;
    EXPECT_NEAR(combined_loss(a, b, cfg).item(), 1.0 - s, 1e-12);
    EXPECT_GE(combined_loss(a, b).item(), 0.0);
}

TEST(Psnr, Examples) {
    EXPECT_EQ(psnr_from_mse(0.01), 20.0);
    auto x = random<float>({1, 3, 4, 4}, 1, 0, 1);
    EXPECT_TRUE(std::isinf(psnr(x, x)));
    EXPECT_GT(psnr(x, x), 0);
    auto a = Tensor<double>::zeros({1, 1, 2, 2});
    auto b = Tensor<double>::full({1, 1, 2, 2}, 0.1);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-12);
}

TEST(Psnr, MoreNoiseNeverRaisesMeanPsnr) {
    auto clean = random<double>({1, 3, 32, 32}, 2, 0.2, 0.8);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.01, 0.02, 0.05, 0.1}) {
        double total = 0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            std::mt19937_64 rng(seed);
            std::normal_distribution<double> n(0.0, sigma);
            std::vector<double> v(clean.data().begin(), clean.data().end());
            for (auto& e : v) e += n(rng);
            total += psnr(Tensor<double>::from_data(clean.shape(), v), clean);
        }
        const double mean = total / 20;
        EXPECT_LT(mean, prev) << "sigma " << sigma;
        prev = mean;
    }
}
