#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "dni/interpolator.hpp"
#include "dni/netgraph.hpp"
#include "oracles.hpp"

using dni::ArchSpec;
using dni::LayerSpec;
using dni::ParamSet;
using dni::Tensor;

namespace {

ArchSpec scalar_arch() {
    ArchSpec a;
    a.arch_id = "scalar";
    a.layers = {LayerSpec::conv(1, 1, 1, /*has_bias=*/false)};
    a.validate();
    return a;
}

ParamSet scalar_model(float w) {
    ParamSet p;
    p.arch = scalar_arch();
    p.entries.emplace_back("conv0.weight", Tensor({1, 1, 1, 1}, {w}));
    p.task_tag = "scalar";
    return p;
}

ParamSet random_model(const ArchSpec& spec, std::uint64_t seed) {
    ParamSet p = dni::init_params(spec, seed);
    dni::Rng rng(seed + 1000);
    for (auto& [name, t] : p.entries) {
        for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    }
    return p;
}

// Same-sign values keep the convex combination free of cancellation, which is
// what makes ulp-level comparisons between algebraically equal forms stable.
ParamSet positive_model(const ArchSpec& spec, std::uint64_t seed) {
    ParamSet p = dni::init_params(spec, seed);
    dni::Rng rng(seed + 2000);
    for (auto& [name, t] : p.entries) {
        for (auto& v : t.values()) v = static_cast<float>(0.1 + rng.u01());
    }
    return p;
}

int ulp_distance(float a, float b) {
    std::int32_t ia, ib;
    std::memcpy(&ia, &a, 4);
    std::memcpy(&ib, &b, 4);
    if (ia < 0) ia = std::numeric_limits<std::int32_t>::min() - ia;
    if (ib < 0) ib = std::numeric_limits<std::int32_t>::min() - ib;
    const std::int64_t d = static_cast<std::int64_t>(ia) - ib;
    return static_cast<int>(std::min<std::int64_t>(std::abs(d), 1000));
}

} // namespace

TEST(InterpolatorTest, EndpointsAreBitExact) {
    const ArchSpec spec = dni::dncnn(4, 6, true);
    const ParamSet a = random_model(spec, 1);
    const ParamSet b = random_model(spec, 2);
    const ParamSet at1 = dni::interp2(a, b, 1.0, true);
    const ParamSet at0 = dni::interp2(a, b, 0.0, true);
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        for (std::int64_t i = 0; i < a.entries[e].second.numel(); ++i) {
            ASSERT_EQ(at1.entries[e].second[i], a.entries[e].second[i]);
            ASSERT_EQ(at0.entries[e].second[i], b.entries[e].second[i]);
        }
    }
}

TEST(InterpolatorTest, ScalarMidpoint) {
    const ParamSet a = scalar_model(2.0f);
    const ParamSet b = scalar_model(4.0f);
    const ParamSet m = dni::interp2(a, b, 0.5, true);
    EXPECT_EQ(m.entries[0].second[0], 3.0f);
    EXPECT_EQ(m.recipe.size(), 2u);
}

TEST(InterpolatorTest, InterpNWithTwoTermsEqualsInterp2) {
    const ArchSpec spec = dni::dncnn(3, 4, false);
    const ParamSet a = random_model(spec, 3);
    const ParamSet b = random_model(spec, 4);
    for (const double alpha : {0.0, 0.3, 0.5, 0.85, 1.0}) {
        const ParamSet via2 = dni::interp2(a, b, alpha, true);
        dni::InterpolationRecipe recipe;
        recipe.terms = {{&a, alpha}, {&b, 1.0 - alpha}};
        const ParamSet viaN = dni::interpN(recipe, true);
        for (std::size_t e = 0; e < a.entries.size(); ++e) {
            for (std::int64_t i = 0; i < a.entries[e].second.numel(); ++i) {
                ASSERT_EQ(via2.entries[e].second[i], viaN.entries[e].second[i]);
            }
        }
    }
}

TEST(InterpolatorTest, AllMassOnOneModel) {
    const ArchSpec spec = dni::dncnn(3, 4, false);
    const ParamSet a = random_model(spec, 5);
    const ParamSet b = random_model(spec, 6);
    const ParamSet c = random_model(spec, 7);
    dni::InterpolationRecipe recipe;
    recipe.terms = {{&a, 0.0}, {&b, 1.0}, {&c, 0.0}};
    const ParamSet r = dni::interpN(recipe, true);
    for (std::size_t e = 0; e < b.entries.size(); ++e) {
        for (std::int64_t i = 0; i < b.entries[e].second.numel(); ++i) {
            ASSERT_EQ(r.entries[e].second[i], b.entries[e].second[i]);
        }
    }
}

TEST(InterpolatorTest, ThreeScalarModels) {
    const ParamSet a = scalar_model(1.0f);
    const ParamSet b = scalar_model(2.0f);
    const ParamSet c = scalar_model(4.0f);
    dni::InterpolationRecipe recipe;
    recipe.terms = {{&a, 0.5}, {&b, 0.25}, {&c, 0.25}};
    EXPECT_EQ(dni::interpN(recipe, true).entries[0].second[0], 2.0f);
}

TEST(InterpolatorTest, RecipeValidation) {
    const ParamSet a = scalar_model(1.0f);
    const ParamSet b = scalar_model(2.0f);

    dni::InterpolationRecipe bad_sum;
    bad_sum.terms = {{&a, 0.5}, {&b, 0.6}};
    EXPECT_THROW(dni::interpN(bad_sum, true), dni::Error);

    dni::InterpolationRecipe negative;
    negative.terms = {{&a, 1.5}, {&b, -0.5}};
    EXPECT_THROW(dni::interpN(negative, true), dni::Error);

    EXPECT_THROW(dni::interp2(a, b, 1.5, true), dni::Error);
    EXPECT_THROW(dni::interp2(a, b, -0.25, true), dni::Error);

    const ParamSet other = random_model(dni::dncnn(3, 4, false), 9);
    EXPECT_THROW(dni::interp2(a, other, 0.5, true), dni::Error);
}

TEST(InterpolatorTest, SymmetryWithinOneUlp) {
    const ArchSpec spec = dni::dncnn(3, 5, true);
    const ParamSet a = positive_model(spec, 10);
    const ParamSet b = positive_model(spec, 11);
    for (const double alpha : {0.15, 0.3, 0.62, 0.97}) {
        const ParamSet ab = dni::interp2(a, b, alpha, true);
        const ParamSet ba = dni::interp2(b, a, 1.0 - alpha, true);
        for (std::size_t e = 0; e < ab.entries.size(); ++e) {
            for (std::int64_t i = 0; i < ab.entries[e].second.numel(); ++i) {
                ASSERT_LE(ulp_distance(ab.entries[e].second[i], ba.entries[e].second[i]), 1);
            }
        }
    }
}

TEST(InterpolatorTest, MatchesAxpyComposition) {
    const ArchSpec spec = dni::dncnn(3, 4, false);
    const ParamSet a = random_model(spec, 12);
    const ParamSet b = random_model(spec, 13);
    const double alpha = 0.37;
    const ParamSet m = dni::interp2(a, b, alpha, true);
    for (std::size_t e = 0; e < a.entries.size(); ++e) {
        const Tensor via_axpy = dni::axpy(
            alpha, a.entries[e].second,
            dni::axpy(1.0 - alpha, b.entries[e].second, dni::zeros(a.entries[e].second.shape())));
        for (std::int64_t i = 0; i < via_axpy.numel(); ++i) {
            ASSERT_LE(ulp_distance(m.entries[e].second[i], via_axpy[i]), 1);
        }
    }
}

TEST(InterpolatorTest, PermutedRecipeAgrees) {
    const ArchSpec spec = dni::dncnn(3, 4, false);
    const ParamSet a = random_model(spec, 14);
    const ParamSet b = random_model(spec, 15);
    const ParamSet c = random_model(spec, 16);
    dni::InterpolationRecipe r1, r2;
    r1.terms = {{&a, 0.2}, {&b, 0.3}, {&c, 0.5}};
    r2.terms = {{&c, 0.5}, {&a, 0.2}, {&b, 0.3}};
    const ParamSet m1 = dni::interpN(r1, true);
    const ParamSet m2 = dni::interpN(r2, true);
    for (std::size_t e = 0; e < m1.entries.size(); ++e) {
        for (std::int64_t i = 0; i < m1.entries[e].second.numel(); ++i) {
            ASSERT_NEAR(m1.entries[e].second[i], m2.entries[e].second[i], 1e-6);
        }
    }
}

TEST(InterpolatorTest, LinearNetworkOutputEquivalence) {
    // A single conv is linear in its parameters, so parameter interpolation
    // and output interpolation coincide.
    ArchSpec spec;
    spec.arch_id = "lin";
    spec.layers = {LayerSpec::conv(1, 1, 3)};
    spec.validate();
    const ParamSet a = random_model(spec, 17);
    const ParamSet b = random_model(spec, 18);
    dni::Rng rng(19);
    Tensor x = Tensor::zeros({1, 1, 8, 8});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());

    for (const double alpha : {0.25, 0.5, 0.8}) {
        const Tensor y_interp = dni::forward(spec, dni::interp2(a, b, alpha, true), x);
        const Tensor ya = dni::forward(spec, a, x);
        const Tensor yb = dni::forward(spec, b, x);
        for (std::int64_t i = 0; i < y_interp.numel(); ++i) {
            ASSERT_NEAR(y_interp[i], alpha * ya[i] + (1.0 - alpha) * yb[i], 1e-5);
        }
    }
}

TEST(InterpolatorTest, NonlinearNetworkBreaksOutputEquivalence) {
    // Negative control: with a ReLU between the convs, interpolating
    // parameters is not interpolating outputs.
    ArchSpec spec;
    spec.arch_id = "nonlin";
    spec.layers = {LayerSpec::conv(1, 4, 3), LayerSpec::relu(), LayerSpec::conv(4, 1, 3)};
    spec.validate();
    const ParamSet a = random_model(spec, 20);
    const ParamSet b = random_model(spec, 21);
    dni::Rng rng(22);
    Tensor x = Tensor::zeros({1, 1, 8, 8});
    for (auto& v : x.values()) v = static_cast<float>(rng.normal());

    const double alpha = 0.5;
    const Tensor y_interp = dni::forward(spec, dni::interp2(a, b, alpha, true), x);
    const Tensor ya = dni::forward(spec, a, x);
    const Tensor yb = dni::forward(spec, b, x);
    double max_diff = 0.0;
    for (std::int64_t i = 0; i < y_interp.numel(); ++i) {
        max_diff = std::max(max_diff,
                            std::abs(y_interp[i] - (alpha * ya[i] + (1.0 - alpha) * yb[i])));
    }
    EXPECT_GT(max_diff, 1e-3);
}

TEST(InterpolatorTest, PixelInterpExamples) {
    Tensor img0 = Tensor::zeros({1, 1, 4, 4});
    Tensor img100 = Tensor::zeros({1, 1, 4, 4});
    for (auto& v : img100.values()) v = 100.0f;

    const Tensor first = dni::pixel_interp({&img0, &img100}, {1.0, 0.0});
    for (std::int64_t i = 0; i < first.numel(); ++i) ASSERT_EQ(first[i], img0[i]);

    const Tensor mid = dni::pixel_interp(img0, img100, 0.5);
    for (std::int64_t i = 0; i < mid.numel(); ++i) ASSERT_EQ(mid[i], 50.0f);

    EXPECT_THROW(dni::pixel_interp({&img0, &img100}, {0.5, 0.6}), dni::Error);
    Tensor small = Tensor::zeros({1, 1, 2, 2});
    EXPECT_THROW(dni::pixel_interp(img0, small, 0.5), dni::Error);
}

TEST(InterpolatorTest, SpatialBlendExamples) {
    Tensor a = Tensor::zeros({1, 1, 4, 4});
    Tensor b = Tensor::zeros({1, 1, 4, 4});
    for (auto& v : a.values()) v = 0.0f;
    for (auto& v : b.values()) v = 100.0f;

    Tensor ones = Tensor::zeros({1, 1, 4, 4});
    for (auto& v : ones.values()) v = 1.0f;
    const Tensor keep_a = dni::spatial_blend(a, b, ones);
    for (std::int64_t i = 0; i < keep_a.numel(); ++i) ASSERT_EQ(keep_a[i], a[i]);

    const Tensor keep_b = dni::spatial_blend(a, b, Tensor::zeros({1, 1, 4, 4}));
    for (std::int64_t i = 0; i < keep_b.numel(); ++i) ASSERT_EQ(keep_b[i], b[i]);

    Tensor checker = Tensor::zeros({1, 1, 4, 4});
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) checker.at4(0, 0, y, x) = (y + x) % 2 ? 1.0f : 0.0f;
    const Tensor board = dni::spatial_blend(a, b, checker);
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) {
            ASSERT_EQ(board.at4(0, 0, y, x), (y + x) % 2 ? 0.0f : 100.0f);
        }

    Tensor bad_mask = ones;
    bad_mask[0] = 1.5f;
    EXPECT_THROW(dni::spatial_blend(a, b, bad_mask), dni::Error);
    EXPECT_THROW(dni::spatial_blend(a, Tensor::zeros({1, 1, 2, 2}), ones), dni::Error);
}

TEST(InterpolatorTest, UnrelatedModelsStillInterpolate) {
    // Scratch pairs produce a warning, not an error (the negative control of
    // the filter study depends on being able to run them).
    const ArchSpec spec = dni::dncnn(3, 4, false);
    const ParamSet a = random_model(spec, 30);
    const ParamSet b = random_model(spec, 31);
    EXPECT_FALSE(dni::lineage_check(a, b).fine_tune_related);
    const ParamSet m = dni::interp2(a, b, 0.5); // warns on stderr, must not throw
    EXPECT_EQ(m.entries.size(), a.entries.size());
}
