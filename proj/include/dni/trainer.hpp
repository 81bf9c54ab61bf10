#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dni/checkpoint.hpp"
#include "dni/error.hpp"
#include "dni/imaging.hpp"
#include "dni/netgraph.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"

namespace dni {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
    std::int64_t iterations = 0;
    int batch_size = 16;
    int patch_size = 40;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    std::uint64_t seed = 0;
    std::vector<double> noise_sigmas;       // one sigma, or several for mixed training
    bool augment = false;                   // random flip / rot90, off for reproducibility
    std::int64_t lr_decay_every = 0;        // 0 = constant rate
    double lr_decay_factor = 1.0;
    std::int64_t log_every = 50;
    std::int64_t checkpoint_every = 0;      // 0 = only on request via checkpoint_path
    std::filesystem::path checkpoint_path;  // final model written here when set
    std::filesystem::path log_path;         // iter,loss,lr lines + a JSON summary
    std::string timestamp = "1970-01-01T00:00:00Z"; // stamped into the checkpoint;
                                                    // fixed default keeps reruns byte-identical

    void validate() const {
        if (iterations < 0) throw Error("iterations must be >= 0");
        if (batch_size < 1 || patch_size < 1) throw Error("batch and patch sizes must be positive");
        if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
        if (noise_sigmas.empty()) throw Error("at least one noise sigma is required");
        for (double s : noise_sigmas) {
            if (s < 0.0) throw Error("noise sigma must be non-negative");
        }
    }

    std::string task_tag() const {
        std::string tag = "denoise-n";
        for (std::size_t i = 0; i < noise_sigmas.size(); ++i) {
            if (i) tag += "+n";
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g", noise_sigmas[i]);
            tag += buf;
        }
        return tag;
    }
};

using Corpus = std::vector<Tensor>; // grayscale images, each [1,1,h,w]

namespace detail {

struct AdamState {
    std::vector<std::vector<float>> m, v;
};

inline bool is_running_stat(const std::string& name) {
    return name.find(".running_") != std::string::npos;
}

/// Draw order per iteration (pinned): mixed runs draw the batch sigma first;
/// then per batch item: image index, crop y, crop x, optional augment draws,
/// then one normal per patch pixel in row-major order.
inline void build_batch(const Corpus& corpus, const TrainConfig& cfg, Rng& rng, Tensor& clean,
                        Tensor& noisy) {
    const int ps = cfg.patch_size;
    double sigma = cfg.noise_sigmas[0];
    if (cfg.noise_sigmas.size() > 1) {
        sigma = cfg.noise_sigmas[static_cast<std::size_t>(rng.below(cfg.noise_sigmas.size()))];
    }
    for (int b = 0; b < cfg.batch_size; ++b) {
        const auto& img = corpus[static_cast<std::size_t>(rng.below(corpus.size()))];
        const std::int64_t h = img.dim(2), w = img.dim(3);
        if (h < ps || w < ps) {
            throw Error("corpus image smaller than patch size " + std::to_string(ps));
        }
        const std::int64_t y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - ps + 1)));
        const std::int64_t x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - ps + 1)));
        std::vector<float> patch(static_cast<std::size_t>(ps) * ps);
        for (int y = 0; y < ps; ++y) {
            for (int x = 0; x < ps; ++x) {
                patch[static_cast<std::size_t>(y) * ps + x] = img.at4(0, 0, y0 + y, x0 + x);
            }
        }
        if (cfg.augment) {
            const bool flip = rng.below(2) == 1;
            const int rot = static_cast<int>(rng.below(4));
            std::vector<float> tmp(patch.size());
            if (flip) {
                for (int y = 0; y < ps; ++y)
                    for (int x = 0; x < ps; ++x)
                        tmp[static_cast<std::size_t>(y) * ps + x] =
                            patch[static_cast<std::size_t>(y) * ps + (ps - 1 - x)];
                patch.swap(tmp);
            }
            for (int r = 0; r < rot; ++r) {
                for (int y = 0; y < ps; ++y)
                    for (int x = 0; x < ps; ++x)
                        tmp[static_cast<std::size_t>(x) * ps + (ps - 1 - y)] =
                            patch[static_cast<std::size_t>(y) * ps + x];
                patch.swap(tmp);
            }
        }
        float* cdst = clean.data() + static_cast<std::int64_t>(b) * ps * ps;
        float* ndst = noisy.data() + static_cast<std::int64_t>(b) * ps * ps;
        for (std::size_t i = 0; i < patch.size(); ++i) {
            cdst[i] = patch[i];
            ndst[i] = static_cast<float>(static_cast<double>(patch[i]) + sigma * rng.normal());
        }
    }
}

inline ParamSet train_loop(const ArchSpec& spec, ParamSet params, const TrainConfig& cfg,
                           const Corpus& corpus) {
    cfg.validate();
    spec.validate();
    if (corpus.empty()) throw Error("training corpus is empty");
    for (const auto& img : corpus) check_image(img, "train corpus");

    params.task_tag = cfg.task_tag();
    params.seed = static_cast<std::int64_t>(cfg.seed);
    params.created_iso8601 = cfg.timestamp;

    // Training consumes its own stream, independent of the init stream.
    Rng rng(seed_combine(cfg.seed, /*tag=*/1));
    Workspace ws;
    AdamState adam;
    if (cfg.optimizer == OptimizerKind::adam) {
        adam.m.resize(params.entries.size());
        adam.v.resize(params.entries.size());
        for (std::size_t e = 0; e < params.entries.size(); ++e) {
            adam.m[e].assign(static_cast<std::size_t>(params.entries[e].second.numel()), 0.0f);
            adam.v[e].assign(static_cast<std::size_t>(params.entries[e].second.numel()), 0.0f);
        }
    }

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path, std::ios::trunc);
        if (!log) throw Error("cannot open log '" + cfg.log_path.string() + "'");
    }

    const int ps = cfg.patch_size;
    Tensor clean = Tensor::zeros({cfg.batch_size, 1, ps, ps});
    Tensor noisy = Tensor::zeros({cfg.batch_size, 1, ps, ps});
    double lr = cfg.learning_rate;
    double last_loss = 0.0;

    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

    for (std::int64_t it = 1; it <= cfg.iterations; ++it) {
        try {
            if (cfg.lr_decay_every > 0 && it > 1 && (it - 1) % cfg.lr_decay_every == 0) {
                lr *= cfg.lr_decay_factor;
            }
            build_batch(corpus, cfg, rng, clean, noisy);

            ForwardCache cache;
            const Tensor out = forward(spec, params, noisy, Mode::train, &cache, &ws);

            const std::int64_t count = out.numel();
            double se = 0.0;
            Tensor grad_y = Tensor::zeros(out.shape());
            for (std::int64_t i = 0; i < count; ++i) {
                const double d = static_cast<double>(out[i]) - static_cast<double>(clean[i]);
                se += d * d;
                grad_y[i] = static_cast<float>(2.0 * d / static_cast<double>(count));
            }
            last_loss = se / static_cast<double>(count);
            if (!std::isfinite(last_loss)) {
                throw Error("loss diverged to a non-finite value");
            }

            const ParamSet grads = backward(spec, params, cache, grad_y, &ws);

            for (std::size_t e = 0; e < params.entries.size(); ++e) {
                if (is_running_stat(params.entries[e].first)) continue;
                Tensor& p = params.entries[e].second;
                const Tensor& gt = grads.entries[e].second;
                if (cfg.optimizer == OptimizerKind::sgd) {
                    for (std::int64_t i = 0; i < p.numel(); ++i) {
                        p[i] = static_cast<float>(p[i] - lr * static_cast<double>(gt[i]));
                    }
                } else {
                    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(it));
                    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(it));
                    float* m = adam.m[e].data();
                    float* v = adam.v[e].data();
                    for (std::int64_t i = 0; i < p.numel(); ++i) {
                        const double gi = static_cast<double>(gt[i]);
                        const double mi = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
                        const double vi = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
                        m[i] = static_cast<float>(mi);
                        v[i] = static_cast<float>(vi);
                        const double mhat = mi / bc1;
                        const double vhat = vi / bc2;
                        p[i] = static_cast<float>(p[i] - lr * mhat / (std::sqrt(vhat) + kAdamEps));
                    }
                }
            }
        } catch (const Error& e) {
            throw Error("iteration " + std::to_string(it) + ": " + e.what());
        }

        if (log && (it == 1 || it == cfg.iterations ||
                    (cfg.log_every > 0 && it % cfg.log_every == 0))) {
            log << it << "," << last_loss << "," << lr << "\n";
        }
        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
            it % cfg.checkpoint_every == 0 && it != cfg.iterations) {
            std::filesystem::path p = cfg.checkpoint_path;
            const std::string ext = p.extension().string();
            p.replace_extension();
            p += ".iter" + std::to_string(it) + ext;
            save(params, p);
        }
    }

    if (!cfg.checkpoint_path.empty()) save(params, cfg.checkpoint_path);
    if (log) {
        log.close();
        const nlohmann::json summary = {{"task_tag", params.task_tag},
                                        {"iterations", cfg.iterations},
                                        {"final_loss", last_loss},
                                        {"learning_rate", cfg.learning_rate},
                                        {"seed", cfg.seed},
                                        {"checksum", checksum(params)}};
        std::filesystem::path sp = cfg.log_path;
        sp.replace_extension(".summary.json");
        std::ofstream sout(sp, std::ios::trunc);
        sout << summary.dump(2) << "\n";
    }
    return params;
}

} // namespace detail

/// Trains from scratch: init_params(spec, seed), then the MSE loop. The result
/// is bit-reproducible from (spec, config, corpus order).
inline ParamSet train(const ArchSpec& spec, const TrainConfig& cfg, const Corpus& corpus) {
    return detail::train_loop(spec, init_params(spec, cfg.seed), cfg, corpus);
}

/// Continues training from `base`; the result records checksum(base) as its
/// parent so lineage_check reports the pair as fine-tune related.
inline ParamSet finetune(const ParamSet& base, const TrainConfig& cfg, const Corpus& corpus) {
    base.validate();
    ParamSet params = base;
    params.parent_checksum = checksum(base);
    params.ancestors = base.ancestors;
    params.ancestors.insert(params.ancestors.begin(), params.parent_checksum);
    return detail::train_loop(base.arch, std::move(params), cfg, corpus);
}

} // namespace dni
