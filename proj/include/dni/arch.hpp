#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dni/error.hpp"

namespace dni {

enum class LayerKind { conv, relu, batchnorm };

struct LayerSpec {
    LayerKind kind = LayerKind::relu;

    // conv
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    bool has_bias = true;

    // batchnorm
    int channels = 0;
    float eps = 1e-5f;
    float momentum = 0.1f;

    static LayerSpec conv(int in_ch, int out_ch, int kernel, bool has_bias = true) {
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.in_ch = in_ch;
        l.out_ch = out_ch;
        l.kernel = kernel;
        l.has_bias = has_bias;
        return l;
    }
    static LayerSpec relu() {
        LayerSpec l;
        l.kind = LayerKind::relu;
        return l;
    }
    static LayerSpec batchnorm(int channels) {
        LayerSpec l;
        l.kind = LayerKind::batchnorm;
        l.channels = channels;
        return l;
    }

    int padding() const { return kernel / 2; }

    bool operator==(const LayerSpec&) const = default;
};

/// Layer list shared by all interpolable models. Parameter names derive from
/// conv ordinals: the i-th conv (0-based) owns "conv{i}.weight"/"conv{i}.bias";
/// a batchnorm following conv i owns "bn{i}.gamma"/".beta"/".running_mean"/
/// ".running_var". With residual_output the network predicts a correction and
/// the output is input minus that prediction.
struct ArchSpec {
    std::string arch_id;
    std::vector<LayerSpec> layers;
    bool residual_output = false;

    bool operator==(const ArchSpec&) const = default;

    int input_channels() const {
        for (const auto& l : layers) {
            if (l.kind == LayerKind::conv) return l.in_ch;
        }
        throw Error("arch '" + arch_id + "' has no conv layer");
    }

    int output_channels() const {
        int ch = input_channels();
        for (const auto& l : layers) {
            if (l.kind == LayerKind::conv) ch = l.out_ch;
        }
        return ch;
    }

    void validate() const {
        if (arch_id.empty()) throw Error("arch_id must be non-empty");
        if (layers.empty()) throw Error("arch '" + arch_id + "' has no layers");
        int ch = -1;
        int last_conv = -1;
        std::vector<bool> bn_used;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const LayerSpec& l = layers[i];
            switch (l.kind) {
            case LayerKind::conv:
                if (l.in_ch < 1 || l.out_ch < 1) throw Error("conv channel counts must be positive");
                if (l.kernel < 1 || l.kernel % 2 == 0) {
                    throw Error("conv kernel must be odd so same-padding preserves size");
                }
                if (ch != -1 && ch != l.in_ch) {
                    throw Error("channel mismatch entering layer " + std::to_string(i) + ": have " +
                                std::to_string(ch) + ", conv expects " + std::to_string(l.in_ch));
                }
                ch = l.out_ch;
                ++last_conv;
                bn_used.push_back(false);
                break;
            case LayerKind::batchnorm:
                if (last_conv < 0) throw Error("batchnorm before any conv layer");
                if (bn_used[static_cast<std::size_t>(last_conv)]) {
                    throw Error("two batchnorm layers attached to conv " + std::to_string(last_conv));
                }
                bn_used[static_cast<std::size_t>(last_conv)] = true;
                if (l.channels != ch) {
                    throw Error("batchnorm channels " + std::to_string(l.channels) +
                                " do not match incoming " + std::to_string(ch));
                }
                if (l.eps <= 0.0f) throw Error("batchnorm eps must be positive");
                break;
            case LayerKind::relu:
                if (ch == -1) throw Error("relu before any conv layer");
                break;
            }
        }
        if (residual_output && input_channels() != output_channels()) {
            throw Error("residual_output requires matching input/output channels");
        }
    }

    /// Declared parameter names and shapes, in checkpoint order.
    std::vector<std::pair<std::string, std::vector<std::int64_t>>> param_layout() const {
        std::vector<std::pair<std::string, std::vector<std::int64_t>>> out;
        int conv_idx = -1;
        for (const auto& l : layers) {
            if (l.kind == LayerKind::conv) {
                ++conv_idx;
                const std::string base = "conv" + std::to_string(conv_idx);
                out.emplace_back(base + ".weight",
                                 std::vector<std::int64_t>{l.out_ch, l.in_ch, l.kernel, l.kernel});
                if (l.has_bias) {
                    out.emplace_back(base + ".bias", std::vector<std::int64_t>{l.out_ch});
                }
            } else if (l.kind == LayerKind::batchnorm) {
                const std::string base = "bn" + std::to_string(conv_idx);
                const std::vector<std::int64_t> shape{l.channels};
                out.emplace_back(base + ".gamma", shape);
                out.emplace_back(base + ".beta", shape);
                out.emplace_back(base + ".running_mean", shape);
                out.emplace_back(base + ".running_var", shape);
            }
        }
        return out;
    }
};

/// Three-layer analysis network: 9x9 feature extraction, 5x5 mapping, 9x9
/// reconstruction, widths 64/32. Direct (non-residual) output.
inline ArchSpec srcnn3() {
    ArchSpec a;
    a.arch_id = "srcnn3";
    a.layers = {LayerSpec::conv(1, 64, 9), LayerSpec::relu(), LayerSpec::conv(64, 32, 5),
                LayerSpec::relu(), LayerSpec::conv(32, 1, 9)};
    a.residual_output = false;
    a.validate();
    return a;
}

/// Residual denoiser with `depth` 3x3 convs of the given width; with
/// batch_norm, interior convs drop their bias and gain a batchnorm.
inline ArchSpec dncnn(int depth, int width, bool batch_norm) {
    if (depth < 2) throw Error("dncnn depth must be at least 2");
    if (width < 1) throw Error("dncnn width must be positive");
    ArchSpec a;
    a.arch_id = "dncnn" + std::to_string(depth);
    a.layers.push_back(LayerSpec::conv(1, width, 3));
    a.layers.push_back(LayerSpec::relu());
    for (int i = 1; i + 1 < depth; ++i) {
        a.layers.push_back(LayerSpec::conv(width, width, 3, /*has_bias=*/!batch_norm));
        if (batch_norm) a.layers.push_back(LayerSpec::batchnorm(width));
        a.layers.push_back(LayerSpec::relu());
    }
    a.layers.push_back(LayerSpec::conv(width, 1, 3));
    a.residual_output = true;
    a.validate();
    return a;
}

/// Resolves "srcnn3" or "dncnn{D}" into a full spec.
inline ArchSpec arch_from_name(const std::string& name, int width = 32, bool batch_norm = false) {
    if (name == "srcnn3") return srcnn3();
    if (name.rfind("dncnn", 0) == 0) {
        const std::string d = name.substr(5);
        if (d.empty()) throw Error("dncnn arch needs a depth, e.g. dncnn7");
        std::size_t pos = 0;
        const int depth = std::stoi(d, &pos);
        if (pos != d.size()) throw Error("bad arch name '" + name + "'");
        return dncnn(depth, width, batch_norm);
    }
    throw Error("unknown arch '" + name + "' (expected srcnn3 or dncnn{D})");
}

inline nlohmann::json arch_to_json(const ArchSpec& a) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : a.layers) {
        switch (l.kind) {
        case LayerKind::conv:
            layers.push_back({{"kind", "conv"},
                              {"in_ch", l.in_ch},
                              {"out_ch", l.out_ch},
                              {"kernel", l.kernel},
                              {"has_bias", l.has_bias}});
            break;
        case LayerKind::relu:
            layers.push_back({{"kind", "relu"}});
            break;
        case LayerKind::batchnorm:
            layers.push_back({{"kind", "batchnorm"},
                              {"channels", l.channels},
                              {"eps", l.eps},
                              {"momentum", l.momentum}});
            break;
        }
    }
    return {{"arch_id", a.arch_id}, {"residual_output", a.residual_output}, {"layers", layers}};
}

inline ArchSpec arch_from_json(const nlohmann::json& j) {
    ArchSpec a;
    a.arch_id = j.at("arch_id").get<std::string>();
    a.residual_output = j.at("residual_output").get<bool>();
    for (const auto& jl : j.at("layers")) {
        const std::string kind = jl.at("kind").get<std::string>();
        if (kind == "conv") {
            a.layers.push_back(LayerSpec::conv(jl.at("in_ch").get<int>(), jl.at("out_ch").get<int>(),
                                               jl.at("kernel").get<int>(),
                                               jl.at("has_bias").get<bool>()));
        } else if (kind == "relu") {
            a.layers.push_back(LayerSpec::relu());
        } else if (kind == "batchnorm") {
            LayerSpec l = LayerSpec::batchnorm(jl.at("channels").get<int>());
            l.eps = jl.at("eps").get<float>();
            l.momentum = jl.at("momentum").get<float>();
            a.layers.push_back(l);
        } else {
            throw Error("unknown layer kind '" + kind + "' in arch json");
        }
    }
    a.validate();
    return a;
}

} // namespace dni
