#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int num_threads);

#include "dni/arch.hpp"
#include "dni/checkpoint.hpp"
#include "dni/error.hpp"
#include "dni/parallel.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"

namespace dni {

enum class Mode { train, eval };

/// Scratch buffers reused across forward/backward calls. Optional; passing one
/// avoids reallocating im2col buffers every training iteration.
struct Workspace {
    std::vector<float> col;
    std::vector<float> dcol;
    std::vector<float> per_image;
};

struct ForwardCache {
    bool valid = false;
    Mode mode = Mode::eval;
    std::string arch_id;
    std::vector<Tensor> inputs;                  // input to each layer
    std::vector<std::vector<double>> bn_mean;    // batch mean per bn layer
    std::vector<std::vector<double>> bn_invstd;  // 1/sqrt(var+eps) per bn layer
};

namespace detail {

#if defined(__x86_64__) && defined(__GNUC__)
// Virtualized CPUs often hide their model id, which drops OpenBLAS onto a slow
// generic kernel. OpenBLAS reads OPENBLAS_CORETYPE in its own initializer, so
// the hint has to be in the environment before that runs; linking the static
// library makes constructor priorities order this first.
__attribute__((constructor(101))) [[maybe_unused]] static void blas_coretype_hint() {
    __builtin_cpu_init(); // the libgcc detector has not run this early
    if (!std::getenv("OPENBLAS_CORETYPE") && __builtin_cpu_supports("avx512f")) {
        setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 0);
    }
}
#endif

inline void blas_single_threaded() {
    // All parallelism is ours; BLAS itself stays single-threaded so results do
    // not depend on its scheduling.
    static std::once_flag once;
    std::call_once(once, [] { openblas_set_num_threads(1); });
}

/// Expands one image [c,h,w] into the [c*k*k, h*w] matrix whose columns are
/// the (zero-padded) receptive fields of each output pixel.
inline void im2col(const float* img, int c, int h, int w, int k, int pad, float* col) {
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int ic = 0; ic < c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                float* dst = col + ((static_cast<std::int64_t>(ic) * k + ky) * k + kx) * hw;
                const int dy = ky - pad;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    float* drow = dst + static_cast<std::int64_t>(y) * w;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h || x1 <= x0) {
                        std::fill(drow, drow + w, 0.0f);
                        continue;
                    }
                    const float* srow = img + (static_cast<std::int64_t>(ic) * h + sy) * w;
                    if (x0 > 0) std::fill(drow, drow + x0, 0.0f);
                    std::memcpy(drow + x0, srow + x0 + dx,
                                static_cast<std::size_t>(x1 - x0) * sizeof(float));
                    if (x1 < w) std::fill(drow + x1, drow + w, 0.0f);
                }
            }
        }
    }
}

/// Scatter-adds a [c*k*k, h*w] column matrix back into an image gradient.
inline void col2im_acc(const float* col, int c, int h, int w, int k, int pad, float* img) {
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    for (int ic = 0; ic < c; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const float* src = col + ((static_cast<std::int64_t>(ic) * k + ky) * k + kx) * hw;
                const int dy = ky - pad;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                if (x1 <= x0) continue;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    float* drow = img + (static_cast<std::int64_t>(ic) * h + sy) * w + dx;
                    const float* srow = src + static_cast<std::int64_t>(y) * w;
                    for (int x = x0; x < x1; ++x) drow[x] += srow[x];
                }
            }
        }
    }
}

struct Stripe {
    std::int64_t image;
    std::int64_t begin;
    std::int64_t end;
};

/// Splits n images x hw columns into at least thread_count() column stripes.
inline std::vector<Stripe> make_stripes(std::int64_t n, std::int64_t hw) {
    const std::int64_t per_image =
        std::max<std::int64_t>(1, (thread_count() + n - 1) / n);
    std::vector<Stripe> out;
    out.reserve(static_cast<std::size_t>(n * per_image));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t s = 0; s < per_image; ++s) {
            const std::int64_t b = hw * s / per_image;
            const std::int64_t e = hw * (s + 1) / per_image;
            if (e > b) out.push_back({i, b, e});
        }
    }
    return out;
}

inline void conv_forward(const Tensor& x, const Tensor& wgt, const float* bias, Tensor& y,
                         Workspace& ws) {
    blas_single_threaded();
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oc = wgt.dim(0);
    const int k = static_cast<int>(wgt.dim(2));
    const int pad = k / 2;
    const std::int64_t hw = h * w;
    const std::int64_t kk = c * k * k;

    ws.col.resize(static_cast<std::size_t>(n * kk * hw));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        im2col(x.data() + static_cast<std::int64_t>(i) * c * hw, static_cast<int>(c),
               static_cast<int>(h), static_cast<int>(w), k, pad,
               ws.col.data() + static_cast<std::int64_t>(i) * kk * hw);
    });

    if (bias) {
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            float* dst = y.data() + static_cast<std::int64_t>(i) * oc * hw;
            for (std::int64_t o = 0; o < oc; ++o) {
                std::fill(dst + o * hw, dst + (o + 1) * hw, bias[o]);
            }
        });
    }

    const auto stripes = make_stripes(n, hw);
    parallel_for(stripes.size(), [&](std::size_t t) {
        const Stripe& s = stripes[t];
        const float* col = ws.col.data() + s.image * kk * hw;
        float* out = y.data() + s.image * oc * hw;
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(oc),
                    static_cast<int>(s.end - s.begin), static_cast<int>(kk), 1.0f, wgt.data(),
                    static_cast<int>(kk), col + s.begin, static_cast<int>(hw),
                    bias ? 1.0f : 0.0f, out + s.begin, static_cast<int>(hw));
    });
}

inline void conv_backward(const Tensor& x, const Tensor& wgt, const Tensor& grad_y, Tensor& grad_w,
                          float* grad_b, Tensor* grad_x, Workspace& ws) {
    blas_single_threaded();
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t oc = wgt.dim(0);
    const int k = static_cast<int>(wgt.dim(2));
    const int pad = k / 2;
    const std::int64_t hw = h * w;
    const std::int64_t kk = c * k * k;

    ws.col.resize(static_cast<std::size_t>(n * kk * hw));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        im2col(x.data() + static_cast<std::int64_t>(i) * c * hw, static_cast<int>(c),
               static_cast<int>(h), static_cast<int>(w), k, pad,
               ws.col.data() + static_cast<std::int64_t>(i) * kk * hw);
    });

    // Per-image weight/bias gradients, reduced over images in fixed order.
    ws.per_image.resize(static_cast<std::size_t>(n * (oc * kk + oc)));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        float* dw = ws.per_image.data() + static_cast<std::int64_t>(i) * (oc * kk + oc);
        float* db = dw + oc * kk;
        const float* dy = grad_y.data() + static_cast<std::int64_t>(i) * oc * hw;
        const float* col = ws.col.data() + static_cast<std::int64_t>(i) * kk * hw;
        cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(oc),
                    static_cast<int>(kk), static_cast<int>(hw), 1.0f, dy, static_cast<int>(hw), col,
                    static_cast<int>(hw), 0.0f, dw, static_cast<int>(kk));
        for (std::int64_t o = 0; o < oc; ++o) {
            double s = 0.0;
            const float* row = dy + o * hw;
            for (std::int64_t j = 0; j < hw; ++j) s += row[j];
            db[o] = static_cast<float>(s);
        }
    });
    for (std::int64_t i = 0; i < n; ++i) {
        const float* dw = ws.per_image.data() + i * (oc * kk + oc);
        const float* db = dw + oc * kk;
        float* acc = grad_w.data();
        for (std::int64_t j = 0; j < oc * kk; ++j) acc[j] += dw[j];
        if (grad_b) {
            for (std::int64_t o = 0; o < oc; ++o) grad_b[o] += db[o];
        }
    }

    if (grad_x) {
        ws.dcol.resize(static_cast<std::size_t>(n * kk * hw));
        const auto stripes = make_stripes(n, hw);
        parallel_for(stripes.size(), [&](std::size_t t) {
            const Stripe& s = stripes[t];
            const float* dy = grad_y.data() + s.image * oc * hw;
            float* dcol = ws.dcol.data() + s.image * kk * hw;
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kk),
                        static_cast<int>(s.end - s.begin), static_cast<int>(oc), 1.0f, wgt.data(),
                        static_cast<int>(kk), dy + s.begin, static_cast<int>(hw), 0.0f,
                        dcol + s.begin, static_cast<int>(hw));
        });
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            float* dst = grad_x->data() + static_cast<std::int64_t>(i) * c * hw;
            std::fill(dst, dst + c * hw, 0.0f);
            col2im_acc(ws.dcol.data() + static_cast<std::int64_t>(i) * kk * hw, static_cast<int>(c),
                       static_cast<int>(h), static_cast<int>(w), k, pad, dst);
        });
    }
}

} // namespace detail

/// Conv weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn elementwise
/// in layer order from Rng(seed); biases zero; batchnorm gamma=1, beta=0,
/// running_mean=0, running_var=1.
inline ParamSet init_params(const ArchSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    ParamSet p;
    p.arch = spec;
    p.task_tag = "init";
    p.seed = static_cast<std::int64_t>(seed);
    int conv_idx = -1;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::conv) {
            ++conv_idx;
            const std::string base = "conv" + std::to_string(conv_idx);
            const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_ch) * l.kernel * l.kernel);
            Tensor wgt = Tensor::zeros({l.out_ch, l.in_ch, l.kernel, l.kernel});
            for (std::int64_t i = 0; i < wgt.numel(); ++i) {
                wgt[i] = static_cast<float>((2.0 * rng.u01() - 1.0) * bound);
            }
            p.entries.emplace_back(base + ".weight", std::move(wgt));
            if (l.has_bias) {
                p.entries.emplace_back(base + ".bias", Tensor::zeros({l.out_ch}));
            }
        } else if (l.kind == LayerKind::batchnorm) {
            const std::string base = "bn" + std::to_string(conv_idx);
            Tensor ones = Tensor::zeros({l.channels});
            for (auto& v : ones.values()) v = 1.0f;
            p.entries.emplace_back(base + ".gamma", ones);
            p.entries.emplace_back(base + ".beta", Tensor::zeros({l.channels}));
            p.entries.emplace_back(base + ".running_mean", Tensor::zeros({l.channels}));
            p.entries.emplace_back(base + ".running_var", ones);
        }
    }
    return p;
}

namespace detail {

inline void check_finite_activation(const Tensor& t, std::size_t layer_idx, const char* kind) {
    for (float v : t.values()) {
        if (!std::isfinite(v)) {
            throw Error("non-finite activation after layer " + std::to_string(layer_idx) + " (" +
                        kind + ")");
        }
    }
}

inline const char* kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::batchnorm: return "batchnorm";
    }
    return "?";
}

inline Tensor forward_impl(const ArchSpec& spec, const ParamSet& params, const Tensor& x, Mode mode,
                           ForwardCache* cache, ParamSet* stats_out, Workspace* ws) {
    if (params.arch != spec) throw Error("forward: params do not belong to this arch");
    if (x.shape().size() != 4) {
        throw Error("forward: input must be [n,c,h,w], got " + Tensor::shape_str(x.shape()));
    }
    if (x.dim(1) != spec.input_channels()) {
        throw Error("forward: input has " + std::to_string(x.dim(1)) + " channels, arch '" +
                    spec.arch_id + "' expects " + std::to_string(spec.input_channels()));
    }
    Workspace local;
    Workspace& wk = ws ? *ws : local;

    if (cache) {
        cache->valid = false;
        cache->mode = mode;
        cache->arch_id = spec.arch_id;
        cache->inputs.clear();
        cache->bn_mean.assign(spec.layers.size(), {});
        cache->bn_invstd.assign(spec.layers.size(), {});
    }

    const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = h * w;
    Tensor cur = x;
    int conv_idx = -1;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        if (cache) cache->inputs.push_back(cur);
        if (l.kind == LayerKind::conv) {
            ++conv_idx;
            const std::string base = "conv" + std::to_string(conv_idx);
            const Tensor& wgt = params.tensor(base + ".weight");
            const float* bias = l.has_bias ? params.tensor(base + ".bias").data() : nullptr;
            Tensor y = Tensor::zeros({n, l.out_ch, h, w});
            detail::conv_forward(cur, wgt, bias, y, wk);
            cur = std::move(y);
        } else if (l.kind == LayerKind::relu) {
            Tensor y = cur;
            for (auto& v : y.values()) v = v > 0.0f ? v : 0.0f;
            cur = std::move(y);
        } else { // batchnorm
            const std::string base = "bn" + std::to_string(conv_idx);
            const Tensor& gamma = params.tensor(base + ".gamma");
            const Tensor& beta = params.tensor(base + ".beta");
            const std::int64_t ch = l.channels;
            const std::int64_t m = n * hw;
            std::vector<double> mean(static_cast<std::size_t>(ch));
            std::vector<double> invstd(static_cast<std::size_t>(ch));
            if (mode == Mode::train) {
                parallel_for(static_cast<std::size_t>(ch), [&](std::size_t ci) {
                    const std::int64_t c = static_cast<std::int64_t>(ci);
                    double sum = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        const float* p = cur.data() + (i * ch + c) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) sum += p[j];
                    }
                    const double mu = sum / static_cast<double>(m);
                    double sq = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) {
                        const float* p = cur.data() + (i * ch + c) * hw;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const double d = p[j] - mu;
                            sq += d * d;
                        }
                    }
                    const double var = sq / static_cast<double>(m); // biased
                    mean[ci] = mu;
                    invstd[ci] = 1.0 / std::sqrt(var + static_cast<double>(l.eps));
                });
                if (stats_out) {
                    Tensor& rm = stats_out->tensor(base + ".running_mean");
                    Tensor& rv = stats_out->tensor(base + ".running_var");
                    const double mom = static_cast<double>(l.momentum);
                    for (std::int64_t c = 0; c < ch; ++c) {
                        rm[c] = static_cast<float>((1.0 - mom) * rm[c] + mom * mean[static_cast<std::size_t>(c)]);
                        const double var = 1.0 / (invstd[static_cast<std::size_t>(c)] *
                                                  invstd[static_cast<std::size_t>(c)]) -
                                           static_cast<double>(l.eps);
                        rv[c] = static_cast<float>((1.0 - mom) * rv[c] + mom * var);
                    }
                }
            } else {
                const Tensor& rm = params.tensor(base + ".running_mean");
                const Tensor& rv = params.tensor(base + ".running_var");
                for (std::int64_t c = 0; c < ch; ++c) {
                    const double denom = static_cast<double>(rv[c]) + static_cast<double>(l.eps);
                    if (denom <= 0.0) {
                        throw Error("batchnorm layer " + std::to_string(li) +
                                    ": running_var + eps is not positive");
                    }
                    mean[static_cast<std::size_t>(c)] = static_cast<double>(rm[c]);
                    invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(denom);
                }
            }
            Tensor y = Tensor::zeros(cur.shape());
            parallel_for(static_cast<std::size_t>(ch), [&](std::size_t ci) {
                const std::int64_t c = static_cast<std::int64_t>(ci);
                const float g = gamma[c];
                const float b = beta[c];
                const float mu = static_cast<float>(mean[ci]);
                const float is = static_cast<float>(invstd[ci]);
                for (std::int64_t i = 0; i < n; ++i) {
                    const float* src = cur.data() + (i * ch + c) * hw;
                    float* dst = y.data() + (i * ch + c) * hw;
                    for (std::int64_t j = 0; j < hw; ++j) dst[j] = g * ((src[j] - mu) * is) + b;
                }
            });
            if (cache) {
                cache->bn_mean[li] = mean;
                cache->bn_invstd[li] = invstd;
            }
            cur = std::move(y);
        }
        detail::check_finite_activation(cur, li, detail::kind_name(l.kind));
    }

    if (cache) cache->valid = true;
    if (spec.residual_output) {
        Tensor out = Tensor::zeros(x.shape());
        for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x[i] - cur[i];
        return out;
    }
    return cur;
}

} // namespace detail

/// Eval-mode inference: deterministic and side-effect free.
inline Tensor forward(const ArchSpec& spec, const ParamSet& params, const Tensor& x,
                      Workspace* ws = nullptr) {
    return detail::forward_impl(spec, params, x, Mode::eval, nullptr, nullptr, ws);
}

/// Train-mode forward updates the batchnorm running statistics in `params`.
inline Tensor forward(const ArchSpec& spec, ParamSet& params, const Tensor& x, Mode mode,
                      ForwardCache* cache = nullptr, Workspace* ws = nullptr) {
    return detail::forward_impl(spec, params, x, mode, cache,
                                mode == Mode::train ? &params : nullptr, ws);
}

/// Gradients for every parameter (running statistics get zero gradients),
/// using a cache from a train-mode forward.
inline ParamSet backward(const ArchSpec& spec, const ParamSet& params, const ForwardCache& cache,
                         const Tensor& grad_y, Workspace* ws = nullptr) {
    if (!cache.valid || cache.arch_id != spec.arch_id ||
        cache.inputs.size() != spec.layers.size()) {
        throw Error("backward: stale or mismatched cache");
    }
    if (cache.mode != Mode::train) throw Error("backward: cache was not produced in train mode");
    if (params.arch != spec) throw Error("backward: params do not belong to this arch");

    Workspace local;
    Workspace& wk = ws ? *ws : local;

    ParamSet grads;
    grads.arch = spec;
    grads.task_tag = "gradients";
    for (const auto& [name, shape] : spec.param_layout()) {
        grads.entries.emplace_back(name, Tensor::zeros(shape));
    }

    const Tensor& x = cache.inputs.front();
    const std::int64_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::int64_t hw = h * w;
    const std::int64_t out_ch = spec.residual_output ? x.dim(1) : spec.output_channels();
    if (grad_y.shape() != std::vector<std::int64_t>{n, out_ch, h, w}) {
        throw Error("backward: grad_y shape " + Tensor::shape_str(grad_y.shape()) +
                    " does not match network output");
    }

    // With residual output y = x - p, the gradient reaching the prediction
    // branch is -grad_y.
    Tensor g = grad_y;
    if (spec.residual_output) {
        for (auto& v : g.values()) v = -v;
    }

    // conv ordinal for each layer index
    std::vector<int> conv_of(spec.layers.size(), -1);
    {
        int ci = -1;
        for (std::size_t li = 0; li < spec.layers.size(); ++li) {
            if (spec.layers[li].kind == LayerKind::conv) ++ci;
            conv_of[li] = ci;
        }
    }

    for (std::size_t ri = spec.layers.size(); ri-- > 0;) {
        const LayerSpec& l = spec.layers[ri];
        const Tensor& input = cache.inputs[ri];
        if (l.kind == LayerKind::conv) {
            const std::string base = "conv" + std::to_string(conv_of[ri]);
            const Tensor& wgt = params.tensor(base + ".weight");
            Tensor* gx = nullptr;
            Tensor gx_store;
            if (ri > 0) {
                gx_store = Tensor::zeros(input.shape());
                gx = &gx_store;
            }
            detail::conv_backward(input, wgt, g, grads.tensor(base + ".weight"),
                                  l.has_bias ? grads.tensor(base + ".bias").data() : nullptr, gx,
                                  wk);
            if (ri > 0) g = std::move(gx_store);
        } else if (l.kind == LayerKind::relu) {
            Tensor gx = g;
            for (std::int64_t i = 0; i < gx.numel(); ++i) {
                if (input[i] <= 0.0f) gx[i] = 0.0f;
            }
            g = std::move(gx);
        } else { // batchnorm
            const std::string base = "bn" + std::to_string(conv_of[ri]);
            const Tensor& gamma = params.tensor(base + ".gamma");
            const auto& mean = cache.bn_mean[ri];
            const auto& invstd = cache.bn_invstd[ri];
            if (mean.empty()) throw Error("backward: cache has no batch stats for layer " +
                                          std::to_string(ri));
            const std::int64_t ch = l.channels;
            const std::int64_t m = n * hw;
            Tensor gx = Tensor::zeros(g.shape());
            Tensor& dgamma = grads.tensor(base + ".gamma");
            Tensor& dbeta = grads.tensor(base + ".beta");
            parallel_for(static_cast<std::size_t>(ch), [&](std::size_t ci) {
                const std::int64_t c = static_cast<std::int64_t>(ci);
                const double mu = mean[ci];
                const double is = invstd[ci];
                double s_dy = 0.0, s_dyx = 0.0;
                for (std::int64_t i = 0; i < n; ++i) {
                    const float* xin = input.data() + (i * ch + c) * hw;
                    const float* dy = g.data() + (i * ch + c) * hw;
                    for (std::int64_t j = 0; j < hw; ++j) {
                        const double xhat = (xin[j] - mu) * is;
                        s_dy += dy[j];
                        s_dyx += dy[j] * xhat;
                    }
                }
                dgamma[c] = static_cast<float>(s_dyx);
                dbeta[c] = static_cast<float>(s_dy);
                const double gscale = static_cast<double>(gamma[c]) * is;
                const double mean_dy = s_dy / static_cast<double>(m);
                const double mean_dyx = s_dyx / static_cast<double>(m);
                for (std::int64_t i = 0; i < n; ++i) {
                    const float* xin = input.data() + (i * ch + c) * hw;
                    const float* dy = g.data() + (i * ch + c) * hw;
                    float* dx = gx.data() + (i * ch + c) * hw;
                    for (std::int64_t j = 0; j < hw; ++j) {
                        const double xhat = (xin[j] - mu) * is;
                        dx[j] = static_cast<float>(gscale * (dy[j] - mean_dy - xhat * mean_dyx));
                    }
                }
            });
            g = std::move(gx);
        }
    }
    return grads;
}

/// Removes batchnorm layers by rescaling the preceding convs so eval-mode
/// outputs are preserved. Every batchnorm must directly follow its conv.
inline std::pair<ArchSpec, ParamSet> fold_bn(const ArchSpec& spec, const ParamSet& params) {
    if (params.arch != spec) throw Error("fold_bn: params do not belong to this arch");
    bool any_bn = false;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::batchnorm) any_bn = true;
    }
    if (!any_bn) throw Error("fold_bn: no batchnorm layers remain");

    ArchSpec folded = spec;
    folded.arch_id = spec.arch_id + "-folded";
    folded.layers.clear();

    struct Fold {
        int conv_idx;
        std::vector<double> scale;   // gamma / sqrt(var + eps)
        std::vector<double> shift;   // beta - mean * scale
    };
    std::vector<Fold> folds;

    int conv_idx = -1;
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const LayerSpec& l = spec.layers[li];
        if (l.kind == LayerKind::conv) {
            ++conv_idx;
            LayerSpec nl = l;
            const bool followed_by_bn =
                li + 1 < spec.layers.size() && spec.layers[li + 1].kind == LayerKind::batchnorm;
            if (followed_by_bn) nl.has_bias = true;
            folded.layers.push_back(nl);
        } else if (l.kind == LayerKind::batchnorm) {
            if (li == 0 || spec.layers[li - 1].kind != LayerKind::conv) {
                throw Error("fold_bn: batchnorm at layer " + std::to_string(li) +
                            " is not immediately preceded by a conv");
            }
            const std::string base = "bn" + std::to_string(conv_idx);
            const Tensor& gamma = params.tensor(base + ".gamma");
            const Tensor& beta = params.tensor(base + ".beta");
            const Tensor& rm = params.tensor(base + ".running_mean");
            const Tensor& rv = params.tensor(base + ".running_var");
            Fold f;
            f.conv_idx = conv_idx;
            for (std::int64_t c = 0; c < l.channels; ++c) {
                const double denom = static_cast<double>(rv[c]) + static_cast<double>(l.eps);
                if (denom <= 0.0) throw Error("fold_bn: running_var + eps is not positive");
                const double s = static_cast<double>(gamma[c]) / std::sqrt(denom);
                f.scale.push_back(s);
                f.shift.push_back(static_cast<double>(beta[c]) - static_cast<double>(rm[c]) * s);
            }
            folds.push_back(std::move(f));
        } else {
            folded.layers.push_back(l);
        }
    }
    folded.validate();

    ParamSet out;
    out.arch = folded;
    out.task_tag = params.task_tag;
    out.seed = params.seed;
    out.created_iso8601 = params.created_iso8601;
    out.parent_checksum = checksum(params);
    out.ancestors = params.ancestors;
    out.ancestors.insert(out.ancestors.begin(), out.parent_checksum);

    conv_idx = -1;
    for (const auto& l : spec.layers) {
        if (l.kind != LayerKind::conv) continue;
        ++conv_idx;
        const std::string base = "conv" + std::to_string(conv_idx);
        Tensor wgt = params.tensor(base + ".weight");
        Tensor bias = Tensor::zeros({l.out_ch});
        if (l.has_bias) bias = params.tensor(base + ".bias");
        const Fold* fold = nullptr;
        for (const auto& f : folds) {
            if (f.conv_idx == conv_idx) fold = &f;
        }
        bool write_bias = l.has_bias;
        if (fold) {
            const std::int64_t per_out = wgt.numel() / l.out_ch;
            for (std::int64_t o = 0; o < l.out_ch; ++o) {
                const double s = fold->scale[static_cast<std::size_t>(o)];
                float* row = wgt.data() + o * per_out;
                for (std::int64_t j = 0; j < per_out; ++j) {
                    row[j] = static_cast<float>(s * static_cast<double>(row[j]));
                }
                bias[o] = static_cast<float>(s * static_cast<double>(bias[o]) +
                                             fold->shift[static_cast<std::size_t>(o)]);
            }
            write_bias = true;
        }
        out.entries.emplace_back(base + ".weight", std::move(wgt));
        if (write_bias) out.entries.emplace_back(base + ".bias", std::move(bias));
    }
    out.validate();
    return {std::move(folded), std::move(out)};
}

} // namespace dni
