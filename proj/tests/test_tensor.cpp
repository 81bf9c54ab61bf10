#include <gtest/gtest.h>

#include "dni/prng.hpp"
#include "dni/tensor.hpp"
#include "oracles.hpp"

using dni::Tensor;

TEST(TensorTest, ZerosDefinition) {
    const Tensor t = dni::zeros({2, 2});
    ASSERT_EQ(t.numel(), 4);
    for (std::int64_t i = 0; i < 4; ++i) EXPECT_EQ(t[i], 0.0f);

    EXPECT_EQ(dni::zeros({1}).numel(), 1);
    EXPECT_EQ(dni::zeros({3, 1, 9, 9}).numel(), 243);
}

TEST(TensorTest, ZerosRejectsBadShapes) {
    EXPECT_THROW(dni::zeros({}), dni::Error);
    EXPECT_THROW(dni::zeros({2, 0}), dni::Error);
    EXPECT_THROW(dni::zeros({-1}), dni::Error);
}

TEST(TensorTest, DataLengthMustMatchShape) {
    EXPECT_THROW(Tensor({2, 2}, {1.0f, 2.0f}), dni::Error);
}

TEST(TensorTest, AxpyExamples) {
    const Tensor x({2}, {1.0f, 2.0f});
    const Tensor y({2}, {0.0f, 0.0f});
    const Tensor r1 = dni::axpy(1.0, x, y);
    EXPECT_EQ(r1[0], 1.0f);
    EXPECT_EQ(r1[1], 2.0f);

    const Tensor r2 = dni::axpy(0.0, Tensor({2}, {7.0f, 7.0f}), Tensor({2}, {3.0f, 4.0f}));
    EXPECT_EQ(r2[0], 3.0f);
    EXPECT_EQ(r2[1], 4.0f);

    const Tensor r3 = dni::axpy(0.5, Tensor({2}, {2.0f, 4.0f}), Tensor({2}, {1.0f, 1.0f}));
    EXPECT_EQ(r3[0], 2.0f);
    EXPECT_EQ(r3[1], 3.0f);
}

TEST(TensorTest, AxpyShapeMismatch) {
    EXPECT_THROW(dni::axpy(1.0, dni::zeros({2}), dni::zeros({3})), dni::Error);
}

TEST(TensorTest, AxpyOverflowIsAnError) {
    const Tensor big({1}, {3e38f});
    EXPECT_THROW(dni::axpy(10.0, big, big), dni::Error);
}

TEST(TensorTest, AxpyIdentityBitExact) {
    dni::Rng rng(7);
    Tensor x = dni::zeros({4, 5});
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        x[i] = static_cast<float>(rng.normal() * 100.0);
    }
    const Tensor r = dni::axpy(1.0, x, dni::zeros(x.shape()));
    ASSERT_TRUE(r.same_shape(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_EQ(r[i], x[i]);
}

TEST(TensorTest, StatsExamples) {
    const auto s1 = dni::stats(Tensor({4}, {1.0f, 1.0f, 1.0f, 1.0f}));
    EXPECT_DOUBLE_EQ(s1.mean, 1.0);
    EXPECT_DOUBLE_EQ(s1.l2norm_centered, 0.0);

    const auto s2 = dni::stats(Tensor({2}, {0.0f, 2.0f}));
    EXPECT_DOUBLE_EQ(s2.mean, 1.0);
    EXPECT_NEAR(s2.l2norm_centered, std::sqrt(2.0), 1e-12);
}

TEST(TensorTest, StatsMatchesTwoPassOracle) {
    dni::Rng rng(123);
    Tensor f = dni::zeros({9, 9});
    for (std::int64_t i = 0; i < f.numel(); ++i) {
        f[i] = static_cast<float>(rng.normal() * 3.0 + 0.5);
    }
    const auto got = dni::stats(f);
    const auto [mean, norm] = oracle::kahan_stats(f);
    EXPECT_NEAR(got.mean, mean, 1e-12);
    EXPECT_NEAR(got.l2norm_centered, norm, 1e-9);
}

TEST(TensorTest, StatsAffineProperty) {
    dni::Rng rng(99);
    Tensor x = dni::zeros({6, 7});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.normal());
    const auto base = dni::stats(x);
    for (const double a : {2.5, -1.25, 0.75}) {
        const double b = 3.0;
        Tensor scaled = dni::zeros(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            scaled[i] = static_cast<float>(a * x[i] + b);
        }
        const auto got = dni::stats(scaled);
        EXPECT_NEAR(got.mean, a * base.mean + b, 1e-5 * std::max(1.0, std::abs(a * base.mean + b)));
        EXPECT_NEAR(got.l2norm_centered, std::abs(a) * base.l2norm_centered,
                    1e-5 * std::abs(a) * base.l2norm_centered);
    }
}
