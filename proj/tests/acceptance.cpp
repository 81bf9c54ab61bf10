// End-to-end acceptance suite: runs every gate the toolkit must clear and
// prints one pass/fail line per criterion. The desk-scale study criteria use
// the shipped configs in configs/ with the corpus in data/.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dni/analysis.hpp"
#include "dni/harness.hpp"
#include "dni/imaging.hpp"
#include "dni/interpolator.hpp"
#include "dni/netgraph.hpp"
#include "dni/trainer.hpp"
#include "gradcheck_cases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using dni::ArchSpec;
using dni::ParamSet;
using dni::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;
std::vector<std::string> g_notes;

double elapsed_s(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(int idx, const std::string& name, bool pass, double secs,
            const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s (%.1f s)%s%s\n", pass ? "PASS" : "FAIL", idx, name.c_str(),
                secs, detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

struct Check {
    bool ok = true;
    std::string detail;
    void require(bool cond, const std::string& what) {
        if (!cond) {
            ok = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

ParamSet positive_model(const ArchSpec& spec, std::uint64_t seed) {
    ParamSet p = dni::init_params(spec, seed);
    dni::Rng rng(seed + 2000);
    for (auto& [name, t] : p.entries) {
        for (auto& v : t.values()) v = static_cast<float>(0.1 + rng.u01());
    }
    return p;
}

ParamSet mixed_model(const ArchSpec& spec, std::uint64_t seed) {
    ParamSet p = dni::init_params(spec, seed);
    dni::Rng rng(seed + 3000);
    for (auto& [name, t] : p.entries) {
        for (auto& v : t.values()) v = static_cast<float>(rng.normal());
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

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- criterion 1: interpolation identities --------------------------------

void criterion_1() {
    const auto t0 = Clock::now();
    Check c;
    const ArchSpec spec = dni::dncnn(7, 32, true);

    {
        const ParamSet a = mixed_model(spec, 1);
        const ParamSet b = mixed_model(spec, 2);
        const ParamSet at1 = dni::interp2(a, b, 1.0, true);
        const ParamSet at0 = dni::interp2(a, b, 0.0, true);
        bool exact = true;
        for (std::size_t e = 0; e < a.entries.size(); ++e) {
            for (std::int64_t i = 0; i < a.entries[e].second.numel(); ++i) {
                exact = exact && at1.entries[e].second[i] == a.entries[e].second[i] &&
                        at0.entries[e].second[i] == b.entries[e].second[i];
            }
        }
        c.require(exact, "endpoints not bit-exact");

        for (const double alpha : {0.0, 0.3, 0.7, 1.0}) {
            dni::InterpolationRecipe recipe;
            recipe.terms = {{&a, alpha}, {&b, 1.0 - alpha}};
            const ParamSet viaN = dni::interpN(recipe, true);
            const ParamSet via2 = dni::interp2(a, b, alpha, true);
            for (std::size_t e = 0; e < a.entries.size() && c.ok; ++e) {
                for (std::int64_t i = 0; i < a.entries[e].second.numel(); ++i) {
                    if (viaN.entries[e].second[i] != via2.entries[e].second[i]) {
                        c.require(false, "interpN(N=2) != interp2 at alpha " + std::to_string(alpha));
                        break;
                    }
                }
            }
        }
    }
    {
        const ParamSet a = positive_model(spec, 3);
        const ParamSet b = positive_model(spec, 4);
        int worst = 0;
        for (const double alpha : {0.15, 0.4, 0.85}) {
            const ParamSet ab = dni::interp2(a, b, alpha, true);
            const ParamSet ba = dni::interp2(b, a, 1.0 - alpha, true);
            for (std::size_t e = 0; e < ab.entries.size(); ++e) {
                for (std::int64_t i = 0; i < ab.entries[e].second.numel(); ++i) {
                    worst = std::max(worst,
                                     ulp_distance(ab.entries[e].second[i], ba.entries[e].second[i]));
                }
            }
        }
        c.require(worst <= 1, "symmetry off by " + std::to_string(worst) + " ulp");
    }
    {
        ArchSpec lin;
        lin.arch_id = "lin";
        lin.layers = {dni::LayerSpec::conv(1, 1, 3)};
        lin.validate();
        const ParamSet a = mixed_model(lin, 5);
        const ParamSet b = mixed_model(lin, 6);
        dni::Rng rng(7);
        Tensor x = Tensor::zeros({1, 1, 10, 10});
        for (auto& v : x.values()) v = static_cast<float>(rng.normal());
        double worst = 0.0;
        for (const double alpha : {0.25, 0.6}) {
            const Tensor yi = dni::forward(lin, dni::interp2(a, b, alpha, true), x);
            const Tensor ya = dni::forward(lin, a, x);
            const Tensor yb = dni::forward(lin, b, x);
            for (std::int64_t i = 0; i < yi.numel(); ++i) {
                worst = std::max(worst, std::abs(yi[i] - (alpha * ya[i] + (1 - alpha) * yb[i])));
            }
        }
        c.require(worst < 1e-5, "linear-network equivalence off by " + std::to_string(worst));
    }
    const double secs = elapsed_s(t0);
    c.require(secs < 10.0, "over the 10 s budget");
    report(1, "interpolation identities", c.ok, secs, c.detail);
}

// --- criterion 2: gradient correctness -------------------------------------

void criterion_2() {
    const auto t0 = Clock::now();
    Check c;
    double worst = 0.0;
    std::string worst_at;
    for (const auto& fc : gradcheck::smooth_fd_cases()) {
        const double margin = oracle::min_relu_margin(fc.spec, fc.params, fc.x);
        c.require(margin > 0.05, fc.name + ": relu margin " + std::to_string(margin));
        const auto r = oracle::finite_diff_check(fc.spec, fc.params, fc.x, fc.target, 1e-3);
        if (r.max_rel > worst) {
            worst = r.max_rel;
            worst_at = fc.name + " " + r.worst;
        }
    }
    c.require(worst < 1e-3, "max rel " + std::to_string(worst) + " at " + worst_at);
    const double secs = elapsed_s(t0);
    c.require(secs < 60.0, "over the 60 s budget");
    report(2, "analytic vs finite-difference gradients", c.ok, secs, c.detail);
}

// --- criterion 3: bn folding ------------------------------------------------

void criterion_3() {
    const auto t0 = Clock::now();
    Check c;
    const ArchSpec spec = dni::dncnn(7, 32, true);
    ParamSet p = dni::init_params(spec, 11);
    dni::Rng rng(12);
    for (auto& [name, t] : p.entries) {
        if (name.find("running_mean") != std::string::npos) {
            for (auto& v : t.values()) v = static_cast<float>(rng.normal() * 0.5);
        } else if (name.find("running_var") != std::string::npos) {
            for (auto& v : t.values()) v = static_cast<float>(0.5 + rng.u01());
        } else if (name.find("gamma") != std::string::npos ||
                   name.find("beta") != std::string::npos) {
            for (auto& v : t.values()) v = static_cast<float>(rng.normal() * 0.7 + 0.5);
        }
    }
    const auto [fspec, fp] = dni::fold_bn(spec, p);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::zeros({1, 1, 12, 12});
        for (auto& v : x.values()) v = static_cast<float>(rng.normal() * 2.0);
        const Tensor y0 = dni::forward(spec, p, x);
        const Tensor y1 = dni::forward(fspec, fp, x);
        for (std::int64_t i = 0; i < y0.numel(); ++i) {
            worst = std::max(worst, static_cast<double>(std::abs(y0[i] - y1[i])));
        }
    }
    c.require(worst < 1e-4, "max abs diff " + std::to_string(worst));
    const double secs = elapsed_s(t0);
    c.require(secs < 10.0, "over the 10 s budget");
    report(3, "batchnorm folding output equivalence", c.ok, secs, c.detail);
}

// --- criterion 4: correlation index ----------------------------------------

void criterion_4() {
    const auto t0 = Clock::now();
    Check c;
    dni::Rng rng(13);
    Tensor f = Tensor::zeros({9, 9});
    for (auto& v : f.values()) v = static_cast<float>(rng.normal());
    c.require(dni::corr_index(f, f) == 1.0, "rho(F,F) != 1");

    Tensor fd = Tensor::zeros({3, 3});
    for (std::int64_t i = 0; i < 9; ++i) {
        fd[i] = static_cast<float>(static_cast<double>(rng.below(17)) - 8.0) / 16.0f;
    }
    Tensor g = Tensor::zeros({3, 3});
    for (auto& v : g.values()) v = static_cast<float>(rng.normal());
    const double base = dni::corr_index(fd, g);
    for (const double a : {2.0, 0.5, -3.0, -0.25}) {
        Tensor scaled = Tensor::zeros(fd.shape());
        for (std::int64_t i = 0; i < 9; ++i) scaled[i] = static_cast<float>(a * fd[i] + 0.625);
        const double got = dni::corr_index(scaled, g);
        c.require(std::abs(got - (a > 0 ? 1.0 : -1.0) * base) < 1e-9,
                  "affine invariance broken at a=" + std::to_string(a));
    }
    for (int trial = 0; trial < 500; ++trial) {
        Tensor u = Tensor::zeros({3, 3});
        Tensor v = Tensor::zeros({3, 3});
        for (auto& w : u.values()) w = static_cast<float>(rng.normal());
        for (auto& w : v.values()) w = static_cast<float>(rng.normal());
        const double rho = dni::corr_index(u, v);
        c.require(rho >= -1.0 && rho <= 1.0, "rho out of [-1,1]");
    }
    const double hand = dni::corr_index(Tensor({4}, {1, 2, 3, 4}), Tensor({4}, {1, 3, 2, 4}));
    c.require(std::abs(hand - 0.8) < 1e-9, "hand example rho != 0.8");
    const double secs = elapsed_s(t0);
    c.require(secs < 5.0, "over the 5 s budget");
    report(4, "correlation index properties", c.ok, secs, c.detail);
}

// --- criterion 5: checkpoint round-trip -------------------------------------

void criterion_5(const fs::path& work) {
    const auto t0 = Clock::now();
    Check c;
    fs::create_directories(work);
    const ArchSpec spec = dni::dncnn(7, 32, true);
    ParamSet p = dni::init_params(spec, 21);
    p.task_tag = "denoise-n20";

    const std::string ck1 = dni::save(p, work / "a.ck");
    const std::string ck2 = dni::save(p, work / "b.ck");
    c.require(ck1 == ck2, "checksums differ between saves");
    c.require(read_bytes(work / "a.ck") == read_bytes(work / "b.ck"), "bytes differ between saves");

    const ParamSet q = dni::load(work / "a.ck");
    bool exact = q.entries.size() == p.entries.size();
    for (std::size_t e = 0; exact && e < p.entries.size(); ++e) {
        exact = q.entries[e].first == p.entries[e].first &&
                q.entries[e].second.values() == p.entries[e].second.values();
    }
    c.require(exact, "round-trip not bit-exact");
    c.require(dni::checksum(q) == ck1, "reloaded checksum differs");

    auto bytes = read_bytes(work / "a.ck");
    bytes[bytes.size() - 12] ^= 0x01;
    std::ofstream out(work / "corrupt.ck", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    bool detected = false;
    try {
        dni::load(work / "corrupt.ck");
    } catch (const dni::Error&) {
        detected = true;
    }
    c.require(detected, "corruption not detected");
    const double secs = elapsed_s(t0);
    c.require(secs < 5.0, "over the 5 s budget");
    report(5, "checkpoint round-trip and corruption detection", c.ok, secs, c.detail);
}

// --- criteria 6-9: desk-scale studies ---------------------------------------

const dni::StudyLevelRow* find_row(const dni::StudyReport& rep, double sigma) {
    for (const auto& r : rep.rows) {
        if (r.sigma == sigma) return &r;
    }
    return nullptr;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void criterion_6(const dni::StudyReport& rep, double study_secs) {
    Check c;
    const auto* r30 = find_row(rep, 30.0);
    const auto* r40 = find_row(rep, 40.0);
    const auto* r50 = find_row(rep, 50.0);
    const auto* r20 = find_row(rep, 20.0);
    c.require(r20 && r30 && r40 && r50, "missing study rows");
    if (c.ok) {
        c.require(r30->dni_psnr >= r30->baseline_psnr + 1.0,
                  "(a) sigma 30: DNI " + fmt(r30->dni_psnr) + " < baseline " +
                      fmt(r30->baseline_psnr) + " + 1.0");
        c.require(r40->dni_psnr >= r40->baseline_psnr + 1.0,
                  "(a) sigma 40: DNI " + fmt(r40->dni_psnr) + " < baseline " +
                      fmt(r40->baseline_psnr) + " + 1.0");
        c.require(r40->has_upper, "(b) no N40 upper bound trained");
        if (r40->has_upper) {
            c.require(r40->dni_psnr >= r40->upper_bound_psnr - 1.5,
                      "(b) sigma 40: DNI " + fmt(r40->dni_psnr) + " more than 1.5 dB under upper " +
                          fmt(r40->upper_bound_psnr));
        }
        c.require(r30->dni_alpha >= r40->dni_alpha && r40->dni_alpha >= r50->dni_alpha,
                  "(c) selected alphas not monotone: " + fmt(r30->dni_alpha) + ", " +
                      fmt(r40->dni_alpha) + ", " + fmt(r50->dni_alpha));
        c.require(r40->dni_psnr >= r40->pixel_interp_psnr + 0.3,
                  "(d) sigma 40: DNI " + fmt(r40->dni_psnr) + " < pixel interp " +
                      fmt(r40->pixel_interp_psnr) + " + 0.3");
        // trainer sanity example: the trained base beats the noisy input by 3 dB
        c.require(r20->dni_psnr >= r20->noisy_input_psnr + 3.0,
                  "base model under noisy-input + 3 dB at sigma 20");
    }
    report(6, "desk-scale unseen-noise study (table-1 analog)", c.ok, study_secs, c.detail);
}

bool curve_monotone_with_slack(const std::vector<double>& medians, std::string& why) {
    int inversions = 0;
    for (std::size_t i = 0; i + 1 < medians.size(); ++i) {
        if (medians[i + 1] > medians[i]) {
            ++inversions;
            if (medians[i + 1] - medians[i] > 0.02) {
                why = "inversion of " + fmt(medians[i + 1] - medians[i]);
                return false;
            }
        }
    }
    if (inversions > 1) {
        why = std::to_string(inversions) + " inversions";
        return false;
    }
    return true;
}

void criterion_7(const dni::CorrStudyReport& rep, double secs) {
    Check c;
    double ft60_front = 0.0, ft60_back = 0.0;
    std::vector<double> front_curve, back_curve;
    for (const auto& row : rep.rows) {
        front_curve.push_back(row.front.median);
        back_curve.push_back(row.back.median);
        if (row.sigma == 60.0) {
            ft60_front = row.front.median;
            ft60_back = row.back.median;
        }
    }
    c.require(ft60_front >= rep.scratch_front.median + 0.2,
              "front: ft " + fmt(ft60_front) + " vs scratch " + fmt(rep.scratch_front.median));
    c.require(ft60_back >= rep.scratch_back.median + 0.2,
              "back: ft " + fmt(ft60_back) + " vs scratch " + fmt(rep.scratch_back.median));
    std::string why;
    c.require(curve_monotone_with_slack(front_curve, why), "front curve: " + why);
    c.require(curve_monotone_with_slack(back_curve, why), "back curve: " + why);
    report(7, "fine-tune correlation vs scratch control", c.ok, secs, c.detail);
}

void criterion_8(const dni::CorrStudyReport& rep, const ParamSet& low, const ParamSet& high,
                 const std::string& layer) {
    const auto t0 = Clock::now();
    Check c;
    c.require(rep.fit_alphas.size() == 3, "expected fit alphas for three targets");
    if (c.ok) {
        const double a30 = rep.fit_alphas[0].second;
        const double a40 = rep.fit_alphas[1].second;
        const double a50 = rep.fit_alphas[2].second;
        c.require(a30 > a40 && a40 > a50, "fit alphas not decreasing: " + fmt(a30) + ", " +
                                              fmt(a40) + ", " + fmt(a50));
        g_notes.push_back("fit alphas (N30,N40,N50): " + fmt(a30) + ", " + fmt(a40) + ", " +
                          fmt(a50));
    }
    c.require(dni::fit_alpha_by_corr(low, high, low, layer) == 1.0, "endpoint target != 1");
    c.require(dni::fit_alpha_by_corr(low, high, high, layer) == 0.0, "endpoint target != 0");
    const double secs = elapsed_s(t0);
    c.require(secs < 60.0, "over the 60 s budget");
    report(8, "correlation-fit alpha sequence", c.ok, secs, c.detail);
}

void criterion_9(const dni::StudyConfig& sc, const dni::CorrStudyConfig& cc,
                 const fs::path& rerun_dir) {
    const auto t0 = Clock::now();
    Check c;
    dni::StudyConfig sc2 = sc;
    sc2.out_dir = rerun_dir;
    dni::CorrStudyConfig cc2 = cc;
    cc2.out_dir = rerun_dir;
    dni::run_unseen_noise_study(sc2);
    dni::run_correlation_study(cc2);
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(sc.out_dir)) {
        const fs::path other = rerun_dir / entry.path().filename();
        if (!fs::exists(other)) {
            c.require(false, "missing " + entry.path().filename().string() + " in rerun");
            continue;
        }
        if (read_bytes(entry.path()) != read_bytes(other)) {
            c.require(false, entry.path().filename().string() + " differs between runs");
        }
        ++compared;
    }
    c.require(compared >= 12, "only " + std::to_string(compared) + " artifacts compared");
    report(9, "full-study bit-identical reproducibility", c.ok, elapsed_s(t0),
           c.ok ? std::to_string(compared) + " artifacts identical" : c.detail);
}

} // namespace

int main(int argc, char** argv) {
    fs::path config_dir = "configs";
    fs::path work_dir = "acceptance_out";
    for (int i = 1; i + 1 < argc; i += 2) {
        if (std::strcmp(argv[i], "--config-dir") == 0) config_dir = argv[i + 1];
        if (std::strcmp(argv[i], "--work-dir") == 0) work_dir = argv[i + 1];
    }
    try {
        fs::create_directories(work_dir);

        criterion_1();
        criterion_2();
        criterion_3();
        criterion_4();
        criterion_5(work_dir / "ckpt");

        dni::StudyConfig sc = dni::StudyConfig::from_json_file(config_dir / "study_unseen.json");
        sc.out_dir = work_dir / "study";
        dni::CorrStudyConfig cc =
            dni::CorrStudyConfig::from_json_file(config_dir / "study_correlation.json");
        cc.out_dir = work_dir / "study";

        const auto t_study = Clock::now();
        const dni::StudyReport study = dni::run_unseen_noise_study(sc);
        const double study_secs = elapsed_s(t_study);
        std::printf("\n%s\n", study.to_table().c_str());
        criterion_6(study, study_secs);

        const auto t_corr = Clock::now();
        const dni::CorrStudyReport corr = dni::run_correlation_study(cc);
        criterion_7(corr, elapsed_s(t_corr));

        const ParamSet low = dni::load(sc.out_dir / "n_low.ck");
        const ParamSet high = dni::load(sc.out_dir / "n_high_ft.ck");
        criterion_8(corr, low, high, corr.front_layer);

        criterion_9(sc, cc, work_dir / "study_rerun");

        for (const auto& n : g_notes) std::printf("note: %s\n", n.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
        return 99;
    }
    std::printf("\n%d of 9 criteria failed\n", g_failures);
    return g_failures;
}
