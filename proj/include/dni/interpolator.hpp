#pragma once

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "dni/checkpoint.hpp"
#include "dni/error.hpp"
#include "dni/tensor.hpp"

namespace dni {

struct InterpolationRecipe {
    std::vector<std::pair<const ParamSet*, double>> terms;
    static constexpr double kSumTolerance = 1e-6;

    void validate() const {
        if (terms.empty()) throw Error("interpolation recipe has no terms");
        double sum = 0.0;
        for (const auto& [model, alpha] : terms) {
            if (!model) throw Error("interpolation recipe references a null model");
            if (!(alpha >= 0.0)) throw Error("interpolation coefficients must be non-negative");
            sum += alpha;
        }
        if (std::abs(sum - 1.0) > kSumTolerance) {
            throw Error("interpolation coefficients sum to " + std::to_string(sum) +
                        ", expected 1");
        }
        const ParamSet& first = *terms.front().first;
        for (std::size_t i = 1; i < terms.size(); ++i) {
            const CompatReport r = lineage_check(first, *terms[i].first);
            if (!(r.same_arch && r.same_names_shapes)) {
                throw Error("interpolation requires identical architectures and parameter lists");
            }
        }
    }
};

namespace detail {

inline std::string format_alpha(double a) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", a);
    return buf;
}

/// Elementwise convex combination in double, fixed term order. Terms with a
/// coefficient of exactly zero are skipped, which makes endpoints bit-exact.
/// The two-term path reproduces axpy(a0, x0, axpy(a1, x1, zeros)) bit for bit.
inline Tensor combine_tensors(const std::vector<const Tensor*>& xs,
                              const std::vector<double>& alphas) {
    Tensor out = Tensor::zeros(xs.front()->shape());
    const std::int64_t n = out.numel();
    if (xs.size() == 2) {
        const Tensor& x0 = *xs[0];
        const Tensor& x1 = *xs[1];
        const double a0 = alphas[0], a1 = alphas[1];
        for (std::int64_t i = 0; i < n; ++i) {
            const float inner =
                a1 == 0.0 ? 0.0f : static_cast<float>(a1 * static_cast<double>(x1[i]) + 0.0);
            out[i] = a0 == 0.0
                         ? inner
                         : static_cast<float>(a0 * static_cast<double>(x0[i]) +
                                              static_cast<double>(inner));
        }
        return out;
    }
    for (std::int64_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t t = 0; t < xs.size(); ++t) {
            if (alphas[t] == 0.0) continue;
            acc += alphas[t] * static_cast<double>((*xs[t])[i]);
        }
        out[i] = static_cast<float>(acc);
    }
    return out;
}

inline void warn_if_unrelated(const ParamSet& a, const ParamSet& b) {
    if (!lineage_check(a, b).fine_tune_related) {
        std::cerr << "warning: interpolating models that are not fine-tune related ('"
                  << a.task_tag << "' vs '" << b.task_tag
                  << "'); results may be meaningless\n";
    }
}

} // namespace detail

/// Convex combination of N parameter sets, elementwise over every entry
/// (conv weights and biases, batchnorm gamma/beta and running statistics
/// alike). Summation order is the recipe order.
inline ParamSet interpN(const InterpolationRecipe& recipe, bool quiet = false) {
    recipe.validate();
    if (!quiet) {
        for (std::size_t i = 1; i < recipe.terms.size(); ++i) {
            detail::warn_if_unrelated(*recipe.terms.front().first, *recipe.terms[i].first);
        }
    }
    const ParamSet& first = *recipe.terms.front().first;
    ParamSet out;
    out.arch = first.arch;
    out.seed = 0;
    out.created_iso8601 = first.created_iso8601;
    std::string tag = "interp(";
    for (std::size_t t = 0; t < recipe.terms.size(); ++t) {
        if (t) tag += ",";
        tag += recipe.terms[t].first->task_tag;
    }
    tag += ";";
    std::vector<double> alphas;
    for (std::size_t t = 0; t < recipe.terms.size(); ++t) {
        alphas.push_back(recipe.terms[t].second);
        if (t) tag += ",";
        tag += detail::format_alpha(recipe.terms[t].second);
        out.recipe.emplace_back(checksum(*recipe.terms[t].first), recipe.terms[t].second);
    }
    out.task_tag = tag + ")";

    for (std::size_t e = 0; e < first.entries.size(); ++e) {
        std::vector<const Tensor*> xs;
        xs.reserve(recipe.terms.size());
        for (const auto& [model, alpha] : recipe.terms) xs.push_back(&model->entries[e].second);
        out.entries.emplace_back(first.entries[e].first, detail::combine_tensors(xs, alphas));
    }
    return out;
}

/// Two-model DNI: alpha * a + (1 - alpha) * b for every parameter.
inline ParamSet interp2(const ParamSet& a, const ParamSet& b, double alpha, bool quiet = false) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw Error("interp2: alpha must lie in [0, 1], got " + std::to_string(alpha));
    }
    InterpolationRecipe recipe;
    recipe.terms = {{&a, alpha}, {&b, 1.0 - alpha}};
    return interpN(recipe, quiet);
}

/// The pixel-space baseline: convex combination of output images.
inline Tensor pixel_interp(const std::vector<const Tensor*>& images,
                           const std::vector<double>& alphas) {
    if (images.empty() || images.size() != alphas.size()) {
        throw Error("pixel_interp: need one coefficient per image");
    }
    double sum = 0.0;
    for (double a : alphas) {
        if (!(a >= 0.0)) throw Error("pixel_interp: coefficients must be non-negative");
        sum += a;
    }
    if (std::abs(sum - 1.0) > InterpolationRecipe::kSumTolerance) {
        throw Error("pixel_interp: coefficients must sum to 1");
    }
    for (const Tensor* img : images) {
        if (!img->same_shape(*images.front())) throw Error("pixel_interp: shape mismatch");
    }
    return detail::combine_tensors(images, alphas);
}

inline Tensor pixel_interp(const Tensor& a, const Tensor& b, double alpha) {
    return pixel_interp({&a, &b}, {alpha, 1.0 - alpha});
}

/// Per-pixel blend mask*a + (1-mask)*b; mask values must lie in [0, 1].
inline Tensor spatial_blend(const Tensor& out_a, const Tensor& out_b, const Tensor& mask) {
    if (!out_a.same_shape(out_b) || !out_a.same_shape(mask)) {
        throw Error("spatial_blend: shape mismatch");
    }
    for (float m : mask.values()) {
        if (!(m >= 0.0f && m <= 1.0f)) {
            throw Error("spatial_blend: mask values must lie in [0, 1]");
        }
    }
    Tensor out = Tensor::zeros(out_a.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double m = static_cast<double>(mask[i]);
        out[i] = static_cast<float>(m * static_cast<double>(out_a[i]) +
                                    (1.0 - m) * static_cast<double>(out_b[i]));
    }
    return out;
}

} // namespace dni
