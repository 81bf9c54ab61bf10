// Gradient-check configurations shared by the unit and acceptance suites.
#pragma once

#include "dni/netgraph.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"

namespace gradcheck {
using dni::ArchSpec;
using dni::LayerSpec;
using dni::ParamSet;
using dni::Tensor;

inline ArchSpec single_conv_arch(int in_ch, int out_ch, int k, bool bias = true) {
    ArchSpec a;
    a.arch_id = "conv1x";
    a.layers = {LayerSpec::conv(in_ch, out_ch, k, bias)};
    a.validate();
    return a;
}
} // namespace gradcheck

// Finite differencing a float32 network with h = 1e-3 is only meaningful when
// no relu input sits inside the perturbation window, so these configurations
// pin every pre-activation away from zero: positive inputs, positive conv
// weights, and per-channel biases (or batchnorm betas) split between clearly
// active and clearly dead. Dead channels exercise the zero branch of the relu
// gradient; the mixed-sign regime is covered by GradientsMatchDoubleOracle.
namespace gradcheck {

struct FdCase {
    std::string name;
    ArchSpec spec;
    ParamSet params;
    Tensor x;
    Tensor target;
};

inline void fill_positive(Tensor& t, dni::Rng& rng, double lo, double hi) {
    for (auto& v : t.values()) v = static_cast<float>(lo + (hi - lo) * rng.u01());
}

inline void fill_signed(Tensor& t, dni::Rng& rng, double scale) {
    for (auto& v : t.values()) v = static_cast<float>((2.0 * rng.u01() - 1.0) * scale);
}

inline void split_bias(Tensor& t, float active, float dead) {
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = i % 2 == 0 ? active : dead;
}

inline std::vector<FdCase> smooth_fd_cases() {
    std::vector<FdCase> cases;
    dni::Rng rng(314);

    {
        FdCase c;
        c.name = "linear-conv";
        c.spec = single_conv_arch(1, 2, 3);
        c.params = dni::init_params(c.spec, 31);
        c.x = Tensor::zeros({1, 1, 6, 6});
        fill_signed(c.x, rng, 1.0);
        c.target = Tensor::zeros({1, 2, 6, 6});
        fill_signed(c.target, rng, 1.0);
        cases.push_back(std::move(c));
    }
    {
        FdCase c;
        c.name = "conv-relu-conv";
        c.spec.arch_id = "crc";
        c.spec.layers = {LayerSpec::conv(1, 4, 3), LayerSpec::relu(), LayerSpec::conv(4, 1, 3)};
        c.spec.validate();
        c.params = dni::init_params(c.spec, 32);
        fill_positive(c.params.tensor("conv0.weight"), rng, 0.01, 0.05);
        split_bias(c.params.tensor("conv0.bias"), 0.6f, -0.9f);
        fill_signed(c.params.tensor("conv1.weight"), rng, 0.3);
        c.x = Tensor::zeros({2, 1, 6, 6});
        fill_positive(c.x, rng, 0.5, 1.5);
        c.target = Tensor::zeros({2, 1, 6, 6});
        fill_signed(c.target, rng, 0.5);
        cases.push_back(std::move(c));
    }
    {
        FdCase c;
        c.name = "conv-bn-relu-conv";
        c.spec.arch_id = "cbrc";
        c.spec.layers = {LayerSpec::conv(1, 4, 3, false), LayerSpec::batchnorm(4),
                         LayerSpec::relu(), LayerSpec::conv(4, 1, 3)};
        c.spec.validate();
        c.params = dni::init_params(c.spec, 33);
        fill_signed(c.params.tensor("conv0.weight"), rng, 0.3);
        for (auto& v : c.params.tensor("bn0.gamma").values()) v = 0.5f;
        split_bias(c.params.tensor("bn0.beta"), 2.0f, -2.0f);
        fill_signed(c.params.tensor("conv1.weight"), rng, 0.3);
        c.x = Tensor::zeros({2, 1, 6, 6});
        fill_signed(c.x, rng, 1.0);
        c.target = Tensor::zeros({2, 1, 6, 6});
        fill_signed(c.target, rng, 0.5);
        cases.push_back(std::move(c));
    }
    {
        FdCase c;
        c.name = "dncnn3-residual";
        c.spec = dni::dncnn(3, 4, false);
        c.params = dni::init_params(c.spec, 34);
        fill_positive(c.params.tensor("conv0.weight"), rng, 0.01, 0.05);
        split_bias(c.params.tensor("conv0.bias"), 0.6f, -0.9f);
        fill_positive(c.params.tensor("conv1.weight"), rng, 0.002, 0.01);
        split_bias(c.params.tensor("conv1.bias"), 0.7f, -0.75f);
        fill_signed(c.params.tensor("conv2.weight"), rng, 0.3);
        c.x = Tensor::zeros({2, 1, 6, 6});
        fill_positive(c.x, rng, 0.5, 1.5);
        c.target = Tensor::zeros({2, 1, 6, 6});
        fill_positive(c.target, rng, 0.5, 1.5);
        cases.push_back(std::move(c));
    }
    {
        FdCase c;
        c.name = "dncnn3-bn-residual";
        c.spec = dni::dncnn(3, 4, true);
        c.params = dni::init_params(c.spec, 35);
        fill_positive(c.params.tensor("conv0.weight"), rng, 0.01, 0.05);
        split_bias(c.params.tensor("conv0.bias"), 0.6f, -0.9f);
        fill_signed(c.params.tensor("conv1.weight"), rng, 0.3);
        for (auto& v : c.params.tensor("bn1.gamma").values()) v = 0.5f;
        split_bias(c.params.tensor("bn1.beta"), 2.0f, -2.0f);
        fill_signed(c.params.tensor("conv2.weight"), rng, 0.3);
        c.x = Tensor::zeros({2, 1, 6, 6});
        fill_positive(c.x, rng, 0.5, 1.5);
        c.target = Tensor::zeros({2, 1, 6, 6});
        fill_positive(c.target, rng, 0.5, 1.5);
        cases.push_back(std::move(c));
    }
    return cases;
}

} // namespace gradcheck
