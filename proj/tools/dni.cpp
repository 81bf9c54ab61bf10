#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dni/analysis.hpp"
#include "dni/harness.hpp"
#include "dni/imaging.hpp"
#include "dni/interpolator.hpp"
#include "dni/netgraph.hpp"
#include "dni/trainer.hpp"

namespace {

std::vector<double> parse_number_list(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        out.push_back(std::stod(s.substr(pos, next - pos)));
        pos = next + 1;
    }
    if (out.empty()) throw dni::Error("expected a comma-separated list of numbers: '" + s + "'");
    return out;
}

std::vector<std::string> parse_path_list(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        std::size_t next = s.find(',', pos);
        if (next == std::string::npos) next = s.size();
        if (next > pos) out.push_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    if (out.empty()) throw dni::Error("expected a comma-separated list of paths: '" + s + "'");
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep network interpolation toolkit for Gaussian denoising"};
    app.require_subcommand(1);

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
    std::string tr_arch = "dncnn7", tr_sigma, tr_data, tr_out, tr_log, tr_timestamp;
    int tr_width = 32, tr_batch = 16, tr_patch = 40;
    bool tr_bn = false, tr_augment = false;
    std::int64_t tr_iters = 1500, tr_seed = 0, tr_ck_every = 0;
    double tr_lr = 1e-3;
    train_cmd->add_option("--arch", tr_arch, "Architecture id (srcnn3 or dncnn{D})");
    train_cmd->add_option("--sigma", tr_sigma, "Noise sigma, or s1,s2 for mixed training")
        ->required();
    train_cmd->add_option("--data", tr_data, "Training manifest")->required();
    train_cmd->add_option("--iters", tr_iters, "Iterations");
    train_cmd->add_option("--seed", tr_seed, "Seed");
    train_cmd->add_option("--out", tr_out, "Output checkpoint")->required();
    train_cmd->add_option("--width", tr_width, "dncnn width");
    train_cmd->add_flag("--bn", tr_bn, "Use batch normalization (dncnn only)");
    train_cmd->add_option("--lr", tr_lr, "Learning rate");
    train_cmd->add_option("--batch", tr_batch, "Batch size");
    train_cmd->add_option("--patch", tr_patch, "Patch size");
    train_cmd->add_option("--log", tr_log, "Training log path");
    train_cmd->add_flag("--augment", tr_augment, "Random flips/rotations");
    train_cmd->add_option("--checkpoint-every", tr_ck_every, "Periodic checkpoint interval");
    train_cmd->add_option("--timestamp", tr_timestamp,
                          "created_iso8601 stamp (default pinned for reproducibility)");

    // --- finetune ---
    auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune an existing checkpoint");
    std::string ft_from, ft_sigma, ft_data, ft_out, ft_log, ft_timestamp;
    std::int64_t ft_iters = 750, ft_seed = 0, ft_ck_every = 0;
    double ft_lr = 1e-4;
    int ft_batch = 16, ft_patch = 40;
    ft_cmd->add_option("--from", ft_from, "Base checkpoint")->required();
    ft_cmd->add_option("--sigma", ft_sigma, "Noise sigma (or list)")->required();
    ft_cmd->add_option("--data", ft_data, "Training manifest")->required();
    ft_cmd->add_option("--iters", ft_iters, "Iterations");
    ft_cmd->add_option("--out", ft_out, "Output checkpoint")->required();
    ft_cmd->add_option("--seed", ft_seed, "Seed");
    ft_cmd->add_option("--lr", ft_lr, "Learning rate (default: train default / 10)");
    ft_cmd->add_option("--batch", ft_batch, "Batch size");
    ft_cmd->add_option("--patch", ft_patch, "Patch size");
    ft_cmd->add_option("--log", ft_log, "Training log path");
    ft_cmd->add_option("--checkpoint-every", ft_ck_every, "Periodic checkpoint interval");
    ft_cmd->add_option("--timestamp", ft_timestamp, "created_iso8601 stamp");

    // --- interp ---
    auto* interp_cmd = app.add_subcommand("interp", "Convex combination of checkpoints");
    std::string in_models, in_alphas, in_out;
    interp_cmd->add_option("--models", in_models, "a.ck,b.ck[,...]")->required();
    interp_cmd->add_option("--alphas", in_alphas, "a1,a2[,...], summing to 1")->required();
    interp_cmd->add_option("--out", in_out, "Output checkpoint")->required();

    // --- sweep ---
    auto* sweep_cmd = app.add_subcommand("sweep", "Alpha sweep of interp2(a,b) at one sigma");
    std::string sw_a, sw_b, sw_test, sw_out;
    double sw_step = 0.05, sw_sigma = 30.0;
    std::uint64_t sw_eval_seed = 900;
    sweep_cmd->add_option("--a", sw_a, "First endpoint checkpoint")->required();
    sweep_cmd->add_option("--b", sw_b, "Second endpoint checkpoint")->required();
    sweep_cmd->add_option("--step", sw_step, "Grid step (must divide 1)");
    sweep_cmd->add_option("--sigma", sw_sigma, "Noise sigma")->required();
    sweep_cmd->add_option("--test", sw_test, "Test manifest")->required();
    sweep_cmd->add_option("--out", sw_out, "Output json")->required();
    sweep_cmd->add_option("--eval-seed", sw_eval_seed, "Evaluation noise seed");

    // --- correlate ---
    auto* corr_cmd = app.add_subcommand("correlate", "Filter correlation reports vs a reference");
    std::string co_models, co_ref, co_layer, co_out, co_csv, co_mode = "positionwise";
    corr_cmd->add_option("--models", co_models, "m1.ck,m2.ck,...")->required();
    corr_cmd->add_option("--ref", co_ref, "Reference checkpoint")->required();
    corr_cmd->add_option("--layer", co_layer, "Layer name, e.g. conv1")->required();
    corr_cmd->add_option("--out", co_out, "Output json")->required();
    corr_cmd->add_option("--csv", co_csv, "Optional (index, median, q10, q90) csv");
    corr_cmd->add_option("--mode", co_mode, "positionwise | first-filter");

    // --- denoise ---
    auto* den_cmd = app.add_subcommand("denoise", "Run a model on an image");
    std::string de_model, de_in, de_out, de_ref, de_model_b, de_mask;
    den_cmd->add_option("--model", de_model, "Checkpoint")->required();
    den_cmd->add_option("--in", de_in, "Input image")->required();
    den_cmd->add_option("--out", de_out, "Output image")->required();
    den_cmd->add_option("--ref", de_ref, "Reference image for PSNR");
    den_cmd->add_option("--model-b", de_model_b, "Second model for mask blending");
    den_cmd->add_option("--mask", de_mask, "Blend mask image (255 = model, 0 = model-b)");

    // --- fold-bn ---
    auto* fold_cmd = app.add_subcommand("fold-bn", "Absorb batchnorm into convolutions");
    std::string fo_in, fo_out;
    fold_cmd->add_option("--in", fo_in, "Input checkpoint")->required();
    fold_cmd->add_option("--out", fo_out, "Output checkpoint")->required();

    // --- study ---
    auto* study_cmd = app.add_subcommand("study", "End-to-end experiment drivers");
    study_cmd->require_subcommand(1);
    auto* unseen_cmd = study_cmd->add_subcommand("unseen-noise", "Unseen-noise-level study");
    std::string un_config;
    unseen_cmd->add_option("--config", un_config, "Study config json")->required();
    auto* corr_study_cmd = study_cmd->add_subcommand("correlation", "Filter-correlation study");
    std::string cs_config;
    corr_study_cmd->add_option("--config", cs_config, "Study config json")->required();

    // --- psnr ---
    auto* psnr_cmd = app.add_subcommand("psnr", "PSNR between two images");
    std::string ps_ref, ps_test;
    psnr_cmd->add_option("--ref", ps_ref, "Reference image")->required();
    psnr_cmd->add_option("--test", ps_test, "Test image")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            dni::TrainConfig cfg;
            cfg.iterations = tr_iters;
            cfg.batch_size = tr_batch;
            cfg.patch_size = tr_patch;
            cfg.learning_rate = tr_lr;
            cfg.seed = static_cast<std::uint64_t>(tr_seed);
            cfg.noise_sigmas = parse_number_list(tr_sigma);
            cfg.augment = tr_augment;
            cfg.checkpoint_every = tr_ck_every;
            cfg.checkpoint_path = tr_out;
            if (!tr_log.empty()) cfg.log_path = tr_log;
            if (!tr_timestamp.empty()) cfg.timestamp = tr_timestamp;
            const dni::ArchSpec spec = dni::arch_from_name(tr_arch, tr_width, tr_bn);
            const dni::Corpus corpus = dni::load_images(dni::load_manifest(tr_data));
            const dni::ParamSet p = dni::train(spec, cfg, corpus);
            std::cout << "trained " << p.task_tag << " -> " << tr_out << " (checksum "
                      << dni::checksum(p) << ")\n";
        } else if (*ft_cmd) {
            dni::TrainConfig cfg;
            cfg.iterations = ft_iters;
            cfg.batch_size = ft_batch;
            cfg.patch_size = ft_patch;
            cfg.learning_rate = ft_lr;
            cfg.seed = static_cast<std::uint64_t>(ft_seed);
            cfg.noise_sigmas = parse_number_list(ft_sigma);
            cfg.checkpoint_every = ft_ck_every;
            cfg.checkpoint_path = ft_out;
            if (!ft_log.empty()) cfg.log_path = ft_log;
            if (!ft_timestamp.empty()) cfg.timestamp = ft_timestamp;
            const dni::ParamSet base = dni::load(ft_from);
            const dni::Corpus corpus = dni::load_images(dni::load_manifest(ft_data));
            const dni::ParamSet p = dni::finetune(base, cfg, corpus);
            std::cout << "fine-tuned " << base.task_tag << " -> " << p.task_tag << " -> " << ft_out
                      << " (checksum " << dni::checksum(p) << ")\n";
        } else if (*interp_cmd) {
            const auto model_paths = parse_path_list(in_models);
            const auto alphas = parse_number_list(in_alphas);
            if (model_paths.size() != alphas.size()) {
                throw dni::Error("got " + std::to_string(model_paths.size()) + " models but " +
                                 std::to_string(alphas.size()) + " alphas");
            }
            std::vector<dni::ParamSet> models;
            models.reserve(model_paths.size());
            for (const auto& mp : model_paths) models.push_back(dni::load(mp));
            dni::InterpolationRecipe recipe;
            for (std::size_t i = 0; i < models.size(); ++i) {
                recipe.terms.emplace_back(&models[i], alphas[i]);
            }
            const dni::ParamSet m = dni::interpN(recipe);
            const std::string ck = dni::save(m, in_out);
            std::cout << "wrote " << m.task_tag << " -> " << in_out << " (checksum " << ck << ")\n";
        } else if (*sweep_cmd) {
            const dni::ParamSet a = dni::load(sw_a);
            const dni::ParamSet b = dni::load(sw_b);
            const auto test = dni::load_images(dni::load_manifest(sw_test));
            const dni::SweepRow row = dni::sweep(a, b, sw_step, test, sw_sigma, sw_eval_seed);
            std::ofstream out(sw_out, std::ios::trunc);
            if (!out) throw dni::Error("cannot open '" + sw_out + "'");
            out << row.to_json().dump(2) << "\n";
            std::printf("sigma %g: best alpha %.2f at %.2f dB (grid of %zu)\n", row.sigma,
                        row.best_alpha, row.best_psnr, row.points.size());
        } else if (*corr_cmd) {
            const dni::ParamSet ref = dni::load(co_ref);
            const dni::CorrMode mode = co_mode == "first-filter" ? dni::CorrMode::first_filter
                                                                 : dni::CorrMode::positionwise;
            nlohmann::json reports = nlohmann::json::array();
            std::vector<std::array<double, 4>> csv_rows;
            std::size_t idx = 0;
            for (const auto& mp : parse_path_list(co_models)) {
                const dni::ParamSet m = dni::load(mp);
                const dni::CorrelationReport rep = dni::model_corr(m, ref, co_layer, mode);
                nlohmann::json jr = rep.to_json();
                jr["model"] = mp;
                reports.push_back(jr);
                csv_rows.push_back({static_cast<double>(idx++), rep.median, rep.q10, rep.q90});
                std::printf("%s: median rho %.4f (q10 %.4f, q90 %.4f, skipped %d)\n", mp.c_str(),
                            rep.median, rep.q10, rep.q90, rep.skipped_constant);
            }
            std::ofstream out(co_out, std::ios::trunc);
            if (!out) throw dni::Error("cannot open '" + co_out + "'");
            out << reports.dump(2) << "\n";
            if (!co_csv.empty()) dni::write_curve_csv(co_csv, csv_rows);
        } else if (*den_cmd) {
            const dni::ParamSet model = dni::load(de_model);
            const dni::Tensor img = dni::load_image(de_in);
            dni::Tensor out = dni::clamp_image(dni::forward(model.arch, model, img));
            if (!de_model_b.empty()) {
                if (de_mask.empty()) throw dni::Error("--model-b requires --mask");
                const dni::ParamSet model_b = dni::load(de_model_b);
                dni::Tensor out_b = dni::clamp_image(dni::forward(model_b.arch, model_b, img));
                dni::Tensor mask = dni::load_image(de_mask);
                for (auto& v : mask.values()) v /= 255.0f;
                out = dni::spatial_blend(out, out_b, mask);
            }
            dni::save_image(out, de_out);
            if (!de_ref.empty()) {
                const double db = dni::psnr(dni::load_image(de_ref), dni::load_image(de_out));
                std::printf("psnr %.4f dB\n", db);
            } else {
                std::cout << "wrote " << de_out << "\n";
            }
        } else if (*fold_cmd) {
            const dni::ParamSet p = dni::load(fo_in);
            const auto [fspec, fp] = dni::fold_bn(p.arch, p);
            const std::string ck = dni::save(fp, fo_out);
            std::cout << "folded " << p.arch_id() << " -> " << fspec.arch_id << " (checksum " << ck
                      << ")\n";
        } else if (*unseen_cmd) {
            const dni::StudyConfig sc = dni::StudyConfig::from_json_file(un_config);
            const dni::StudyReport rep = dni::run_unseen_noise_study(sc);
            std::cout << rep.to_table();
            std::cout << "report written to " << (sc.out_dir / "study_report.json").string() << "\n";
        } else if (*corr_study_cmd) {
            const dni::CorrStudyConfig cc = dni::CorrStudyConfig::from_json_file(cs_config);
            const dni::CorrStudyReport rep = dni::run_correlation_study(cc);
            std::printf("layers: front %s, back %s\n", rep.front_layer.c_str(),
                        rep.back_layer.c_str());
            for (const auto& r : rep.rows) {
                std::printf("N%-3g median rho front %.4f back %.4f\n", r.sigma, r.front.median,
                            r.back.median);
            }
            std::printf("scratch control: front %.4f back %.4f\n", rep.scratch_front.median,
                        rep.scratch_back.median);
            for (const auto& [s, a] : rep.fit_alphas) {
                std::printf("fit alpha for N%g: %.2f\n", s, a);
            }
            std::cout << "report written to " << (cc.out_dir / "correlation_report.json").string()
                      << "\n";
        } else if (*psnr_cmd) {
            const double db = dni::psnr(dni::load_image(ps_ref), dni::load_image(ps_test));
            std::printf("%.4f\n", db);
        }
    } catch (const dni::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
