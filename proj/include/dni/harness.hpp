#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dni/analysis.hpp"
#include "dni/checkpoint.hpp"
#include "dni/error.hpp"
#include "dni/imaging.hpp"
#include "dni/interpolator.hpp"
#include "dni/netgraph.hpp"
#include "dni/parallel.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"
#include "dni/trainer.hpp"

namespace dni {

/// Grid {0, step, 2*step, ..., 1}; step must divide 1. Points are k/K so the
/// endpoints are exactly 0 and 1.
inline std::vector<double> alpha_grid(double step) {
    if (!(step > 0.0 && step <= 1.0)) throw Error("grid step must lie in (0, 1]");
    const std::int64_t k = std::llround(1.0 / step);
    if (std::abs(step * static_cast<double>(k) - 1.0) > 1e-9) {
        throw Error("grid step must divide 1");
    }
    std::vector<double> grid;
    for (std::int64_t i = 0; i <= k; ++i) {
        grid.push_back(static_cast<double>(i) / static_cast<double>(k));
    }
    return grid;
}

struct SweepPoint {
    double alpha = 0.0;
    double mean_psnr = 0.0;
};

struct SweepRow {
    double sigma = 0.0;
    std::vector<SweepPoint> points; // ascending alpha
    double best_alpha = 0.0;
    double best_psnr = 0.0;

    nlohmann::json to_json() const {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : points) pts.push_back({{"alpha", p.alpha}, {"mean_psnr", p.mean_psnr}});
        return {{"sigma", sigma},
                {"points", pts},
                {"best", {{"alpha", best_alpha}, {"psnr", best_psnr}}}};
    }
};

/// Ties break toward the larger alpha; points must be in ascending alpha order.
inline SweepPoint pick_best(const std::vector<SweepPoint>& points) {
    if (points.empty()) throw Error("pick_best: empty sweep");
    SweepPoint best = points.front();
    for (const auto& p : points) {
        if (p.mean_psnr >= best.mean_psnr) best = p;
    }
    return best;
}

/// Noise seed for test image `idx` at `sigma`: pinned so every method sees the
/// same corrupted inputs.
inline std::uint64_t eval_noise_seed(std::uint64_t eval_seed, double sigma, std::size_t idx) {
    return seed_combine(seed_combine(eval_seed, static_cast<std::uint64_t>(std::llround(sigma * 1000.0))),
                        idx);
}

inline std::vector<Tensor> make_noisy_set(const std::vector<Tensor>& clean, double sigma,
                                          std::uint64_t eval_seed) {
    std::vector<Tensor> noisy(clean.size());
    parallel_for(clean.size(), [&](std::size_t i) {
        noisy[i] = add_noise(clean[i], NoiseModel{sigma, eval_noise_seed(eval_seed, sigma, i)});
    });
    return noisy;
}

/// Eval-mode outputs, clamped to [0,255], one per test image.
inline std::vector<Tensor> denoise_set(const ParamSet& model, const std::vector<Tensor>& noisy) {
    std::vector<Tensor> out(noisy.size());
    parallel_for(noisy.size(), [&](std::size_t i) {
        out[i] = clamp_image(forward(model.arch, model, noisy[i]));
    });
    return out;
}

inline double mean_psnr(const std::vector<Tensor>& ref, const std::vector<Tensor>& test) {
    double sum = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) sum += psnr(ref[i], test[i]);
    return sum / static_cast<double>(ref.size());
}

/// DNI alpha sweep at one noise level: for each grid alpha, denoise the pinned
/// noisy test set with interp2(a, b, alpha) and record the mean PSNR.
inline SweepRow sweep(const ParamSet& a, const ParamSet& b, double step,
                      const std::vector<Tensor>& test_images, double sigma,
                      std::uint64_t eval_seed) {
    const std::vector<double> grid = alpha_grid(step);
    const std::vector<Tensor> noisy = make_noisy_set(test_images, sigma, eval_seed);

    SweepRow row;
    row.sigma = sigma;
    row.points.resize(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const ParamSet model = interp2(a, b, grid[g], /*quiet=*/g != 0);
        row.points[g] = {grid[g], mean_psnr(test_images, denoise_set(model, noisy))};
    }
    const SweepPoint best = pick_best(row.points);
    row.best_alpha = best.alpha;
    row.best_psnr = best.mean_psnr;
    return row;
}

// ---------------------------------------------------------------------------
// Unseen-noise-level study (the Table-1 style reproduction)
// ---------------------------------------------------------------------------

struct StudyConfig {
    std::string arch = "dncnn7";
    int width = 32;
    bool with_bn = false;

    std::filesystem::path train_manifest;
    std::filesystem::path test_manifest;
    std::filesystem::path out_dir;

    double sigma_low = 20.0;
    double sigma_high = 60.0;
    std::vector<double> levels = {20.0, 30.0, 40.0, 50.0, 60.0};
    std::vector<double> upper_bounds = {40.0};
    double sweep_step = 0.1;

    std::int64_t iterations = 1500;
    std::int64_t finetune_iterations = 750;
    double learning_rate = 1e-3;
    double finetune_learning_rate = 0.0; // 0 = learning_rate / 10
    std::int64_t lr_decay_every = 0;
    double lr_decay_factor = 1.0;
    int batch_size = 16;
    int patch_size = 40;

    std::uint64_t seed = 1001;
    std::uint64_t eval_seed = 900;
    std::string timestamp = "1970-01-01T00:00:00Z";

    double finetune_lr() const {
        return finetune_learning_rate > 0.0 ? finetune_learning_rate : learning_rate / 10.0;
    }

    static StudyConfig from_json_file(const std::filesystem::path& path);
};

struct StudyLevelRow {
    double sigma = 0.0;
    bool unseen = false;
    bool has_upper = false;
    double upper_bound_psnr = 0.0;
    double baseline_psnr = 0.0;
    double dni_psnr = 0.0;
    double dni_alpha = 0.0;
    double pixel_interp_psnr = 0.0;
    double pixel_interp_alpha = 0.0;
    double noisy_input_psnr = 0.0;
    std::vector<SweepPoint> pixel_points; // same grid as the DNI sweep
};

struct StudyReport {
    bool with_bn = false;
    std::vector<double> grid;
    std::vector<StudyLevelRow> rows;
    std::vector<SweepRow> sweeps;

    nlohmann::json to_json() const {
        nlohmann::json jrows = nlohmann::json::array();
        for (const auto& r : rows) {
            nlohmann::json jr = {{"sigma", r.sigma},
                                 {"unseen", r.unseen},
                                 {"baseline_psnr", r.baseline_psnr},
                                 {"dni_psnr", r.dni_psnr},
                                 {"dni_alpha", r.dni_alpha},
                                 {"pixel_interp_psnr", r.pixel_interp_psnr},
                                 {"pixel_interp_alpha", r.pixel_interp_alpha},
                                 {"noisy_input_psnr", r.noisy_input_psnr}};
            nlohmann::json px = nlohmann::json::array();
            for (const auto& p : r.pixel_points) {
                px.push_back({{"alpha", p.alpha}, {"mean_psnr", p.mean_psnr}});
            }
            jr["pixel_points"] = px;
            if (r.has_upper) {
                jr["upper_bound_psnr"] = r.upper_bound_psnr;
            } else {
                jr["upper_bound_psnr"] = nullptr;
            }
            jrows.push_back(jr);
        }
        nlohmann::json jsweeps = nlohmann::json::array();
        for (const auto& s : sweeps) jsweeps.push_back(s.to_json());
        return {{"with_bn", with_bn}, {"alpha_grid", grid}, {"rows", jrows}, {"sweeps", jsweeps}};
    }

    std::string to_table() const {
        auto fmt = [](double v) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%7.2f", v);
            return std::string(buf);
        };
        auto head = [](const std::string& s) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%7s", s.c_str());
            return std::string(buf);
        };
        std::string out = "Noise level  ";
        for (const auto& r : rows) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "N%g%s", r.sigma, r.unseen ? "*" : "");
            out += head(buf);
        }
        out += "\nUpper bound  ";
        for (const auto& r : rows) out += r.has_upper ? fmt(r.upper_bound_psnr) : head("-");
        out += "\nBaseline     ";
        for (const auto& r : rows) out += fmt(r.baseline_psnr);
        out += "\nDNI          ";
        for (const auto& r : rows) out += fmt(r.dni_psnr);
        out += "\nalpha        ";
        for (const auto& r : rows) out += fmt(r.dni_alpha);
        out += "\nPixel interp ";
        for (const auto& r : rows) out += fmt(r.pixel_interp_psnr);
        out += "\nNoisy input  ";
        for (const auto& r : rows) out += fmt(r.noisy_input_psnr);
        out += "\n(* = unseen during training)\n";
        return out;
    }
};

namespace detail {

// Per-stage seed tags; stage seeds are seed_combine(config.seed, tag).
enum StageTag : std::uint64_t {
    kStageScratchLow = 10,
    kStageFinetuneHigh = 11,
    kStageBaseline = 12,
    kStageUpper = 40,        // + llround(sigma)
    kStageFinetuneLevel = 400, // + llround(sigma)
    kStageScratchControl = 15,
};

template <typename BuildFn>
ParamSet run_stage(const std::string& name, const std::filesystem::path& path, BuildFn&& build) {
    try {
        if (std::filesystem::exists(path)) {
            std::cerr << "[stage " << name << "] reusing " << path.string() << "\n";
            return load(path);
        }
        std::cerr << "[stage " << name << "] training...\n";
        ParamSet p = build();
        save(p, path);
        return p;
    } catch (const Error& e) {
        throw Error("stage '" + name + "' failed: " + std::string(e.what()));
    }
}

inline TrainConfig stage_config(const StudyConfig& sc, std::vector<double> sigmas,
                                std::int64_t iterations, double lr, std::uint64_t tag) {
    TrainConfig tc;
    tc.iterations = iterations;
    tc.batch_size = sc.batch_size;
    tc.patch_size = sc.patch_size;
    tc.learning_rate = lr;
    tc.optimizer = OptimizerKind::adam;
    tc.seed = seed_combine(sc.seed, tag);
    tc.noise_sigmas = std::move(sigmas);
    tc.lr_decay_every = sc.lr_decay_every;
    tc.lr_decay_factor = sc.lr_decay_factor;
    tc.timestamp = sc.timestamp;
    return tc;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

} // namespace detail

/// Trains the N(sigma_low) base, fine-tunes it to sigma_high, trains the mixed
/// baseline (and any upper bounds), then sweeps DNI and pixel interpolation
/// over every requested level on pinned noisy test sets.
inline StudyReport run_unseen_noise_study(const StudyConfig& sc) {
    namespace fs = std::filesystem;
    const ArchSpec spec = arch_from_name(sc.arch, sc.width, sc.with_bn);
    fs::create_directories(sc.out_dir);

    const Corpus train_images = load_images(load_manifest(sc.train_manifest));
    const std::vector<Tensor> test_images = load_images(load_manifest(sc.test_manifest));

    auto sigma_name = [](double s) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", s);
        return std::string(buf);
    };

    const ParamSet low = detail::run_stage(
        "train-n" + sigma_name(sc.sigma_low), sc.out_dir / "n_low.ck", [&] {
            return train(spec,
                         detail::stage_config(sc, {sc.sigma_low}, sc.iterations, sc.learning_rate,
                                              detail::kStageScratchLow),
                         train_images);
        });
    const ParamSet high = detail::run_stage(
        "finetune-n" + sigma_name(sc.sigma_high), sc.out_dir / "n_high_ft.ck", [&] {
            return finetune(low,
                            detail::stage_config(sc, {sc.sigma_high}, sc.finetune_iterations,
                                                 sc.finetune_lr(), detail::kStageFinetuneHigh),
                            train_images);
        });
    const ParamSet baseline = detail::run_stage("baseline", sc.out_dir / "baseline.ck", [&] {
        return train(spec,
                     detail::stage_config(sc, {sc.sigma_low, sc.sigma_high}, sc.iterations,
                                          sc.learning_rate, detail::kStageBaseline),
                     train_images);
    });
    std::vector<std::pair<double, ParamSet>> uppers;
    for (double s : sc.upper_bounds) {
        uppers.emplace_back(
            s, detail::run_stage("upper-n" + sigma_name(s),
                                 sc.out_dir / ("upper_n" + sigma_name(s) + ".ck"), [&] {
                                     return train(spec,
                                                  detail::stage_config(
                                                      sc, {s}, sc.iterations, sc.learning_rate,
                                                      detail::kStageUpper +
                                                          static_cast<std::uint64_t>(std::llround(s))),
                                                  train_images);
                                 }));
    }

    StudyReport report;
    report.with_bn = sc.with_bn;
    report.grid = alpha_grid(sc.sweep_step);

    for (double sigma : sc.levels) {
        try {
            const std::vector<Tensor> noisy = make_noisy_set(test_images, sigma, sc.eval_seed);

            StudyLevelRow row;
            row.sigma = sigma;
            row.unseen = sigma != sc.sigma_low && sigma != sc.sigma_high;

            std::vector<Tensor> clamped_noisy(noisy.size());
            for (std::size_t i = 0; i < noisy.size(); ++i) clamped_noisy[i] = clamp_image(noisy[i]);
            row.noisy_input_psnr = mean_psnr(test_images, clamped_noisy);

            SweepRow sw;
            sw.sigma = sigma;
            sw.points.resize(report.grid.size());
            std::vector<Tensor> out_low, out_high;
            for (std::size_t g = 0; g < report.grid.size(); ++g) {
                const double alpha = report.grid[g];
                const ParamSet model = interp2(low, high, alpha, /*quiet=*/true);
                const std::vector<Tensor> outs = denoise_set(model, noisy);
                sw.points[g] = {alpha, mean_psnr(test_images, outs)};
                if (alpha == 1.0) out_low = outs;   // interp2 endpoints are bit-exact
                if (alpha == 0.0) out_high = outs;
            }
            const SweepPoint best = pick_best(sw.points);
            sw.best_alpha = best.alpha;
            sw.best_psnr = best.mean_psnr;
            report.sweeps.push_back(sw);
            row.dni_alpha = best.alpha;
            row.dni_psnr = best.mean_psnr;

            row.baseline_psnr = mean_psnr(test_images, denoise_set(baseline, noisy));

            // Pixel-space baseline: blend the two endpoint outputs over the same
            // grid and keep its best row.
            std::vector<SweepPoint> px_points;
            for (double alpha : report.grid) {
                std::vector<Tensor> blended(noisy.size());
                parallel_for(noisy.size(), [&](std::size_t i) {
                    blended[i] = pixel_interp(out_low[i], out_high[i], alpha);
                });
                px_points.push_back({alpha, mean_psnr(test_images, blended)});
            }
            const SweepPoint px_best = pick_best(px_points);
            row.pixel_interp_alpha = px_best.alpha;
            row.pixel_interp_psnr = px_best.mean_psnr;
            row.pixel_points = px_points;

            for (const auto& [us, umodel] : uppers) {
                if (us == sigma) {
                    row.has_upper = true;
                    row.upper_bound_psnr = mean_psnr(test_images, denoise_set(umodel, noisy));
                }
            }
            report.rows.push_back(row);
        } catch (const Error& e) {
            throw Error("stage 'sweep-n" + sigma_name(sigma) + "' failed: " + std::string(e.what()));
        }
    }

    detail::write_text_file(sc.out_dir / "study_report.txt", report.to_table());
    detail::write_text_file(sc.out_dir / "study_report.json", report.to_json().dump(2) + "\n");
    return report;
}

// ---------------------------------------------------------------------------
// Correlation study (the Fig. 2 / Fig. 4 / Fig. 12 style reproduction)
// ---------------------------------------------------------------------------

struct CorrStudyConfig {
    std::string arch = "dncnn7";
    int width = 32;
    bool with_bn = false;

    std::filesystem::path train_manifest;
    std::filesystem::path out_dir;

    double sigma_low = 20.0;
    double sigma_high = 60.0;
    std::vector<double> finetune_levels = {30.0, 40.0, 50.0};

    std::int64_t iterations = 1500;
    std::int64_t finetune_iterations = 750;
    double learning_rate = 1e-3;
    double finetune_learning_rate = 0.0;
    std::int64_t lr_decay_every = 0;
    double lr_decay_factor = 1.0;
    int batch_size = 16;
    int patch_size = 40;

    std::uint64_t seed = 1001;
    std::uint64_t control_seed = 7007; // second scratch run
    std::string front_layer;           // empty = scaled 5/17 rule
    std::string back_layer;            // empty = scaled 12/17 rule
    std::string timestamp = "1970-01-01T00:00:00Z";

    double finetune_lr() const {
        return finetune_learning_rate > 0.0 ? finetune_learning_rate : learning_rate / 10.0;
    }

    static CorrStudyConfig from_json_file(const std::filesystem::path& path);
};

struct CorrLevelRow {
    double sigma = 0.0;
    CorrelationReport front;
    CorrelationReport back;
};

struct CorrStudyReport {
    std::string front_layer, back_layer;
    std::vector<CorrLevelRow> rows; // ascending sigma, includes the reference level
    CorrelationReport scratch_front, scratch_back;
    std::vector<std::pair<double, double>> fit_alphas; // (target sigma, alpha*)

    nlohmann::json to_json() const {
        nlohmann::json jrows = nlohmann::json::array();
        for (const auto& r : rows) {
            jrows.push_back({{"sigma", r.sigma},
                             {"front", r.front.to_json()},
                             {"back", r.back.to_json()}});
        }
        nlohmann::json jfit = nlohmann::json::array();
        for (const auto& [s, a] : fit_alphas) jfit.push_back({{"sigma", s}, {"alpha", a}});
        return {{"front_layer", front_layer},
                {"back_layer", back_layer},
                {"rows", jrows},
                {"scratch_control", {{"front", scratch_front.to_json()},
                                     {"back", scratch_back.to_json()}}},
                {"fit_alphas", jfit}};
    }
};

/// Analyzed conv layers for a depth-D stack, scaling the 5th/12th-of-17 choice:
/// front = round(5D/17), back = round(12D/17), 1-based ordinals clamped to the
/// interior, returned as 0-based conv names.
inline std::pair<std::string, std::string> analysis_layers(const ArchSpec& spec) {
    int convs = 0;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::conv) ++convs;
    }
    if (convs < 3) throw Error("analysis layers need at least 3 convs");
    auto clamp_pos = [&](long p) {
        return std::min<long>(std::max<long>(p, 2), convs - 1);
    };
    const long front = clamp_pos(std::lround(5.0 * convs / 17.0));
    const long back = std::max(clamp_pos(std::lround(12.0 * convs / 17.0)), front);
    return {"conv" + std::to_string(front - 1), "conv" + std::to_string(back - 1)};
}

/// Fine-tunes the base model to every requested level, trains a second scratch
/// run as the control, and reports median correlation curves against the base
/// plus the correlation-fit alpha sequence. Reuses checkpoints already present
/// in out_dir (the unseen-noise study's base/fine-tune stages share names).
inline CorrStudyReport run_correlation_study(const CorrStudyConfig& cc) {
    namespace fs = std::filesystem;
    const ArchSpec spec = arch_from_name(cc.arch, cc.width, cc.with_bn);
    fs::create_directories(cc.out_dir);

    StudyConfig sc;
    sc.batch_size = cc.batch_size;
    sc.patch_size = cc.patch_size;
    sc.seed = cc.seed;
    sc.lr_decay_every = cc.lr_decay_every;
    sc.lr_decay_factor = cc.lr_decay_factor;
    sc.timestamp = cc.timestamp;

    const Corpus train_images = load_images(load_manifest(cc.train_manifest));

    auto sigma_name = [](double s) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g", s);
        return std::string(buf);
    };

    const ParamSet low = detail::run_stage(
        "train-n" + sigma_name(cc.sigma_low), cc.out_dir / "n_low.ck", [&] {
            return train(spec,
                         detail::stage_config(sc, {cc.sigma_low}, cc.iterations, cc.learning_rate,
                                              detail::kStageScratchLow),
                         train_images);
        });
    const ParamSet high = detail::run_stage(
        "finetune-n" + sigma_name(cc.sigma_high), cc.out_dir / "n_high_ft.ck", [&] {
            return finetune(low,
                            detail::stage_config(sc, {cc.sigma_high}, cc.finetune_iterations,
                                                 cc.finetune_lr(), detail::kStageFinetuneHigh),
                            train_images);
        });

    std::vector<std::pair<double, ParamSet>> level_models;
    for (double s : cc.finetune_levels) {
        level_models.emplace_back(
            s, detail::run_stage(
                   "finetune-n" + sigma_name(s), cc.out_dir / ("ft_n" + sigma_name(s) + ".ck"),
                   [&] {
                       return finetune(
                           low,
                           detail::stage_config(sc, {s}, cc.finetune_iterations, cc.finetune_lr(),
                                                detail::kStageFinetuneLevel +
                                                    static_cast<std::uint64_t>(std::llround(s))),
                           train_images);
                   }));
    }

    StudyConfig sc_control = sc;
    sc_control.seed = cc.control_seed;
    const ParamSet scratch2 = detail::run_stage(
        "scratch-control-n" + sigma_name(cc.sigma_low), cc.out_dir / "n_low_scratch2.ck", [&] {
            return train(spec,
                         detail::stage_config(sc_control, {cc.sigma_low}, cc.iterations,
                                              cc.learning_rate, detail::kStageScratchControl),
                         train_images);
        });

    const auto [auto_front, auto_back] = analysis_layers(spec);
    const std::string front = cc.front_layer.empty() ? auto_front : cc.front_layer;
    const std::string back = cc.back_layer.empty() ? auto_back : cc.back_layer;

    CorrStudyReport report;
    report.front_layer = front;
    report.back_layer = back;

    std::vector<std::pair<double, const ParamSet*>> curve;
    curve.emplace_back(cc.sigma_low, &low);
    for (const auto& [s, m] : level_models) curve.emplace_back(s, &m);
    curve.emplace_back(cc.sigma_high, &high);
    std::sort(curve.begin(), curve.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    for (const auto& [s, m] : curve) {
        CorrLevelRow row;
        row.sigma = s;
        row.front = model_corr(*m, low, front);
        row.back = model_corr(*m, low, back);
        report.rows.push_back(std::move(row));
    }
    report.scratch_front = model_corr(scratch2, low, front);
    report.scratch_back = model_corr(scratch2, low, back);

    for (const auto& [s, m] : level_models) {
        report.fit_alphas.emplace_back(s, fit_alpha_by_corr(low, high, m, front));
    }

    detail::write_text_file(cc.out_dir / "correlation_report.json",
                            report.to_json().dump(2) + "\n");
    std::vector<std::array<double, 4>> front_rows, back_rows;
    for (const auto& r : report.rows) {
        front_rows.push_back({r.sigma, r.front.median, r.front.q10, r.front.q90});
        back_rows.push_back({r.sigma, r.back.median, r.back.q10, r.back.q90});
    }
    write_curve_csv(cc.out_dir / "correlation_front.csv", front_rows);
    write_curve_csv(cc.out_dir / "correlation_back.csv", back_rows);
    return report;
}

// ---------------------------------------------------------------------------
// Config file loading
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad json in '" + path.string() + "': " + e.what());
    }
}

inline std::filesystem::path resolve_rel(const std::filesystem::path& base,
                                         const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
}

} // namespace detail

inline StudyConfig StudyConfig::from_json_file(const std::filesystem::path& path) {
    const nlohmann::json j = detail::read_json_file(path);
    const std::filesystem::path base = path.parent_path();
    StudyConfig c;
    try {
        c.arch = j.value("arch", c.arch);
        c.width = j.value("width", c.width);
        c.with_bn = j.value("with_bn", c.with_bn);
        c.train_manifest = detail::resolve_rel(base, j.at("train_manifest").get<std::string>());
        c.test_manifest = detail::resolve_rel(base, j.at("test_manifest").get<std::string>());
        c.out_dir = detail::resolve_rel(base, j.at("out_dir").get<std::string>());
        c.sigma_low = j.value("sigma_low", c.sigma_low);
        c.sigma_high = j.value("sigma_high", c.sigma_high);
        if (j.contains("levels")) c.levels = j.at("levels").get<std::vector<double>>();
        if (j.contains("upper_bounds")) {
            c.upper_bounds = j.at("upper_bounds").get<std::vector<double>>();
        }
        c.sweep_step = j.value("sweep_step", c.sweep_step);
        c.iterations = j.value("iterations", c.iterations);
        c.finetune_iterations = j.value("finetune_iterations", c.finetune_iterations);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.finetune_learning_rate = j.value("finetune_learning_rate", c.finetune_learning_rate);
        c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
        c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.seed = j.value("seed", c.seed);
        c.eval_seed = j.value("eval_seed", c.eval_seed);
        c.timestamp = j.value("timestamp", c.timestamp);
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad study config '" + path.string() + "': " + e.what());
    }
    return c;
}

inline CorrStudyConfig CorrStudyConfig::from_json_file(const std::filesystem::path& path) {
    const nlohmann::json j = detail::read_json_file(path);
    const std::filesystem::path base = path.parent_path();
    CorrStudyConfig c;
    try {
        c.arch = j.value("arch", c.arch);
        c.width = j.value("width", c.width);
        c.with_bn = j.value("with_bn", c.with_bn);
        c.train_manifest = detail::resolve_rel(base, j.at("train_manifest").get<std::string>());
        c.out_dir = detail::resolve_rel(base, j.at("out_dir").get<std::string>());
        c.sigma_low = j.value("sigma_low", c.sigma_low);
        c.sigma_high = j.value("sigma_high", c.sigma_high);
        if (j.contains("finetune_levels")) {
            c.finetune_levels = j.at("finetune_levels").get<std::vector<double>>();
        }
        c.iterations = j.value("iterations", c.iterations);
        c.finetune_iterations = j.value("finetune_iterations", c.finetune_iterations);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.finetune_learning_rate = j.value("finetune_learning_rate", c.finetune_learning_rate);
        c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
        c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.seed = j.value("seed", c.seed);
        c.control_seed = j.value("control_seed", c.control_seed);
        c.front_layer = j.value("front_layer", c.front_layer);
        c.back_layer = j.value("back_layer", c.back_layer);
        c.timestamp = j.value("timestamp", c.timestamp);
    } catch (const nlohmann::json::exception& e) {
        throw Error("bad correlation config '" + path.string() + "': " + e.what());
    }
    return c;
}

} // namespace dni
