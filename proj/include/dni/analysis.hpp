#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dni/checkpoint.hpp"
#include "dni/error.hpp"
#include "dni/interpolator.hpp"
#include "dni/tensor.hpp"

namespace dni {

/// Scale- and shift-invariant filter similarity (centered cosine / Pearson):
///   rho = sum((f1-m1)(f2-m2)) / (||f1-m1|| * ||f2-m2||)
/// Exactly parallel filters return exactly +-1; constant filters are an error.
inline double corr_index(const Tensor& f1, const Tensor& f2) {
    if (!f1.same_shape(f2)) {
        throw Error("corr_index: shape mismatch " + Tensor::shape_str(f1.shape()) + " vs " +
                    Tensor::shape_str(f2.shape()));
    }
    const std::int64_t n = f1.numel();
    double s1 = 0.0, s2 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        s1 += static_cast<double>(f1[i]);
        s2 += static_cast<double>(f2[i]);
    }
    const double m1 = s1 / static_cast<double>(n);
    const double m2 = s2 / static_cast<double>(n);
    double d11 = 0.0, d22 = 0.0, d12 = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double a = static_cast<double>(f1[i]) - m1;
        const double b = static_cast<double>(f2[i]) - m2;
        d11 += a * a;
        d22 += b * b;
        d12 += a * b;
    }
    if (std::sqrt(d11) <= 1e-12 || std::sqrt(d22) <= 1e-12) {
        throw Error("corr_index: constant filter, correlation undefined");
    }
    if (d12 * d12 == d11 * d22) return d12 > 0.0 ? 1.0 : -1.0;
    const double rho = d12 / std::sqrt(d11 * d22);
    return std::min(1.0, std::max(-1.0, rho));
}

struct FilterRef {
    std::string layer;
    int out_index = 0;
    int in_index = 0;
};

enum class CorrMode { positionwise, first_filter };

struct CorrelationReport {
    std::string reference_checksum;
    std::string model_checksum;
    std::string layer;
    CorrMode mode = CorrMode::positionwise;
    std::vector<std::pair<FilterRef, double>> per_filter;
    int skipped_constant = 0;
    double median = 0.0;
    double q10 = 0.0, q25 = 0.0, q75 = 0.0, q90 = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json pf = nlohmann::json::array();
        for (const auto& [ref, rho] : per_filter) {
            pf.push_back({{"layer", ref.layer},
                          {"out_index", ref.out_index},
                          {"in_index", ref.in_index},
                          {"rho", rho}});
        }
        return {{"reference_checksum", reference_checksum},
                {"model_checksum", model_checksum},
                {"layer", layer},
                {"mode", mode == CorrMode::positionwise ? "positionwise" : "first_filter"},
                {"skipped_constant", skipped_constant},
                {"median", median},
                {"quantiles", {{"q10", q10}, {"q25", q25}, {"q75", q75}, {"q90", q90}}},
                {"per_filter", pf}};
    }
};

namespace detail {

inline double sorted_quantile(const std::vector<double>& sorted, double p) {
    // linear interpolation between closest ranks (R type 7)
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = (static_cast<double>(n) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double sorted_median(const std::vector<double>& sorted) {
    const std::size_t n = sorted.size();
    if (n % 2 == 1) return sorted[n / 2];
    return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
}

inline Tensor filter_slice(const Tensor& weight, std::int64_t o, std::int64_t i) {
    const std::int64_t kh = weight.dim(2), kw = weight.dim(3);
    std::vector<float> vals(static_cast<std::size_t>(kh * kw));
    const float* src = weight.data() + (o * weight.dim(1) + i) * kh * kw;
    std::copy(src, src + kh * kw, vals.begin());
    return Tensor({kh, kw}, std::move(vals));
}

inline std::string weight_name(const ParamSet& p, const std::string& layer) {
    std::string name = layer;
    if (name.size() < 7 || name.substr(name.size() - 7) != ".weight") name += ".weight";
    if (!p.find(name)) {
        throw Error("layer '" + layer + "' not found in model '" + p.task_tag + "'");
    }
    return name;
}

inline bool filter_constant(const Tensor& f) {
    return stats(f).l2norm_centered <= 1e-12;
}

} // namespace detail

/// Correlation indexes between the named layer's filters of `model` and
/// `ref`. positionwise pairs filter (o,i) with ref filter (o,i); first_filter
/// pairs every filter of `model` against ref filter (0,0). Constant filters
/// are skipped and counted.
inline CorrelationReport model_corr(const ParamSet& model, const ParamSet& ref,
                                    const std::string& layer,
                                    CorrMode mode = CorrMode::positionwise) {
    const CompatReport compat = lineage_check(model, ref);
    if (!compat.same_names_shapes) {
        throw Error("model_corr: models do not share parameter names/shapes");
    }
    const std::string wname = detail::weight_name(model, layer);
    const Tensor& wm = model.tensor(wname);
    const Tensor& wr = ref.tensor(wname);

    CorrelationReport rep;
    rep.layer = wname.substr(0, wname.size() - 7);
    rep.mode = mode;
    rep.reference_checksum = checksum(ref);
    rep.model_checksum = checksum(model);

    const Tensor ref00 = detail::filter_slice(wr, 0, 0);
    const bool ref00_constant = detail::filter_constant(ref00);

    std::vector<double> rhos;
    for (std::int64_t o = 0; o < wm.dim(0); ++o) {
        for (std::int64_t i = 0; i < wm.dim(1); ++i) {
            const Tensor fm = detail::filter_slice(wm, o, i);
            const Tensor fr =
                mode == CorrMode::positionwise ? detail::filter_slice(wr, o, i) : ref00;
            if (detail::filter_constant(fm) ||
                (mode == CorrMode::positionwise ? detail::filter_constant(fr) : ref00_constant)) {
                ++rep.skipped_constant;
                continue;
            }
            const double rho = corr_index(fm, fr);
            rep.per_filter.push_back(
                {FilterRef{rep.layer, static_cast<int>(o), static_cast<int>(i)}, rho});
            rhos.push_back(rho);
        }
    }
    if (rhos.empty()) {
        throw Error("model_corr: every filter in layer '" + rep.layer + "' is constant");
    }
    std::sort(rhos.begin(), rhos.end());
    rep.median = detail::sorted_median(rhos);
    rep.q10 = detail::sorted_quantile(rhos, 0.10);
    rep.q25 = detail::sorted_quantile(rhos, 0.25);
    rep.q75 = detail::sorted_quantile(rhos, 0.75);
    rep.q90 = detail::sorted_quantile(rhos, 0.90);
    return rep;
}

/// The correlation-optimizing interpolation coefficient: argmax over the grid
/// alpha in {0, 0.05, ..., 1} of the median positionwise correlation between
/// interp2(a, b, alpha) and `target` on the named layer. Ties break toward
/// the larger alpha.
inline double fit_alpha_by_corr(const ParamSet& a, const ParamSet& b, const ParamSet& target,
                                const std::string& layer) {
    constexpr int kSteps = 20;
    double best_alpha = 0.0;
    double best_median = -2.0;
    for (int k = 0; k <= kSteps; ++k) {
        const double alpha = static_cast<double>(k) / kSteps;
        const ParamSet m = interp2(a, b, alpha, /*quiet=*/true);
        const CorrelationReport rep = model_corr(m, target, layer, CorrMode::positionwise);
        if (rep.median >= best_median) {
            best_median = rep.median;
            best_alpha = alpha;
        }
    }
    return best_alpha;
}

/// (level, median, q10, q90) rows for external plotting.
inline void write_curve_csv(const std::filesystem::path& path,
                            const std::vector<std::array<double, 4>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << "level,median,q10,q90\n";
    for (const auto& r : rows) {
        out << r[0] << "," << r[1] << "," << r[2] << "," << r[3] << "\n";
    }
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

} // namespace dni
