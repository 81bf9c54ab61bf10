// Generates the procedural grayscale corpus checked into data/: multi-octave
// value noise plus soft shapes, gradients and sinusoidal gratings, so the
// images carry both smooth regions and fine texture. Everything derives from
// the seed, so the corpus can be regenerated bit-identically.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dni/imaging.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"

namespace fs = std::filesystem;

namespace {

double smootherstep(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

void add_value_noise(std::vector<double>& img, std::int64_t h, std::int64_t w, int cell,
                     double amp, dni::Rng& rng) {
    const std::int64_t gh = h / cell + 2;
    const std::int64_t gw = w / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh * gw));
    for (auto& v : grid) v = 2.0 * rng.u01() - 1.0;
    for (std::int64_t y = 0; y < h; ++y) {
        const std::int64_t gy = y / cell;
        const double ty = smootherstep(static_cast<double>(y % cell) / cell);
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t gx = x / cell;
            const double tx = smootherstep(static_cast<double>(x % cell) / cell);
            const double v00 = grid[static_cast<std::size_t>(gy * gw + gx)];
            const double v01 = grid[static_cast<std::size_t>(gy * gw + gx + 1)];
            const double v10 = grid[static_cast<std::size_t>((gy + 1) * gw + gx)];
            const double v11 = grid[static_cast<std::size_t>((gy + 1) * gw + gx + 1)];
            const double top = v00 + tx * (v01 - v00);
            const double bot = v10 + tx * (v11 - v10);
            img[static_cast<std::size_t>(y * w + x)] += amp * (top + ty * (bot - top));
        }
    }
}

void add_disc(std::vector<double>& img, std::int64_t h, std::int64_t w, dni::Rng& rng) {
    const double cx = rng.u01() * w;
    const double cy = rng.u01() * h;
    const double r = (0.08 + 0.22 * rng.u01()) * std::min(h, w);
    const double soft = 1.0 + 4.0 * rng.u01();
    const double v = (2.0 * rng.u01() - 1.0) * 80.0;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            const double t = std::clamp((r - d) / soft, 0.0, 1.0);
            img[static_cast<std::size_t>(y * w + x)] += v * smootherstep(t);
        }
    }
}

void add_bar(std::vector<double>& img, std::int64_t h, std::int64_t w, dni::Rng& rng) {
    const double angle = rng.u01() * 3.14159265358979;
    const double nx = std::cos(angle), ny = std::sin(angle);
    const double off = (rng.u01() - 0.5) * (h + w) * 0.5;
    const double width = 2.0 + 10.0 * rng.u01();
    const double v = (2.0 * rng.u01() - 1.0) * 70.0;
    const double cx = w / 2.0, cy = h / 2.0;
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double d = std::abs((x - cx) * nx + (y - cy) * ny - off);
            const double t = std::clamp((width - d) / 1.5, 0.0, 1.0);
            img[static_cast<std::size_t>(y * w + x)] += v * smootherstep(t);
        }
    }
}

void add_grating(std::vector<double>& img, std::int64_t h, std::int64_t w, dni::Rng& rng) {
    const double angle = rng.u01() * 3.14159265358979;
    const double freq = (0.06 + 0.27 * rng.u01()); // cycles per pixel
    const double fx = freq * std::cos(angle), fy = freq * std::sin(angle);
    const double phase = rng.u01() * 6.28318530717959;
    const double amp = 22.0 + 33.0 * rng.u01();
    // confined to a random window so gratings read as textured patches
    const std::int64_t wx0 = static_cast<std::int64_t>(rng.u01() * w * 0.5);
    const std::int64_t wy0 = static_cast<std::int64_t>(rng.u01() * h * 0.5);
    const std::int64_t wx1 = std::min<std::int64_t>(w, wx0 + w / 2 + static_cast<std::int64_t>(rng.u01() * w * 0.7));
    const std::int64_t wy1 = std::min<std::int64_t>(h, wy0 + h / 2 + static_cast<std::int64_t>(rng.u01() * h * 0.7));
    for (std::int64_t y = wy0; y < wy1; ++y) {
        for (std::int64_t x = wx0; x < wx1; ++x) {
            const double edge = std::min(std::min(x - wx0, wx1 - 1 - x) / 6.0,
                                         std::min(y - wy0, wy1 - 1 - y) / 6.0);
            const double win = smootherstep(std::clamp(edge, 0.0, 1.0));
            img[static_cast<std::size_t>(y * w + x)] +=
                win * amp * std::sin(6.28318530717959 * (fx * x + fy * y) + phase);
        }
    }
}

dni::Tensor make_image(std::int64_t size, dni::Rng& rng) {
    const std::int64_t h = size, w = size;
    std::vector<double> img(static_cast<std::size_t>(h * w), 0.0);

    // base gradient
    const double gx = (2.0 * rng.u01() - 1.0) * 50.0;
    const double gy = (2.0 * rng.u01() - 1.0) * 50.0;
    const double base = 90.0 + 70.0 * rng.u01();
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            img[static_cast<std::size_t>(y * w + x)] =
                base + gx * (static_cast<double>(x) / w - 0.5) +
                gy * (static_cast<double>(y) / h - 0.5);
        }
    }

    add_value_noise(img, h, w, static_cast<int>(size / 3), 28.0, rng);
    add_value_noise(img, h, w, static_cast<int>(size / 6), 20.0, rng);
    add_value_noise(img, h, w, 8, 18.0, rng);
    add_value_noise(img, h, w, 4, 16.0, rng);
    add_value_noise(img, h, w, 2, 8.0, rng);

    const int discs = 2 + static_cast<int>(rng.below(3));
    for (int i = 0; i < discs; ++i) add_disc(img, h, w, rng);
    const int bars = 2 + static_cast<int>(rng.below(3));
    for (int i = 0; i < bars; ++i) add_bar(img, h, w, rng);
    const int gratings = 4 + static_cast<int>(rng.below(3));
    for (int i = 0; i < gratings; ++i) add_grating(img, h, w, rng);

    dni::Tensor out = dni::Tensor::zeros({1, 1, h, w});
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        out[i] = static_cast<float>(std::clamp(img[static_cast<std::size_t>(i)], 0.0, 255.0));
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generate the procedural grayscale training/test corpus"};
    std::string out_dir = "data";
    int train_count = 20, test_count = 10;
    std::int64_t train_size = 144, test_size = 96;
    std::uint64_t seed = 20260809;
    app.add_option("--out", out_dir, "Output directory");
    app.add_option("--train", train_count, "Training image count");
    app.add_option("--test", test_count, "Test image count");
    app.add_option("--train-size", train_size, "Training image side length");
    app.add_option("--test-size", test_size, "Test image side length");
    app.add_option("--seed", seed, "Corpus seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path root(out_dir);
        fs::create_directories(root / "train");
        fs::create_directories(root / "test");

        std::ofstream train_manifest(root / "train.txt", std::ios::trunc);
        train_manifest << "# procedural training corpus, seed " << seed << "\n";
        for (int i = 0; i < train_count; ++i) {
            dni::Rng rng(dni::seed_combine(seed, 1000 + static_cast<std::uint64_t>(i)));
            char name[64];
            std::snprintf(name, sizeof(name), "train/tr%02d.pgm", i);
            dni::save_image(make_image(train_size, rng), root / name);
            train_manifest << name << "\n";
        }

        std::ofstream test_manifest(root / "test.txt", std::ios::trunc);
        test_manifest << "# procedural test corpus, seed " << seed << "\n";
        for (int i = 0; i < test_count; ++i) {
            dni::Rng rng(dni::seed_combine(seed, 2000 + static_cast<std::uint64_t>(i)));
            char name[64];
            std::snprintf(name, sizeof(name), "test/te%02d.pgm", i);
            dni::save_image(make_image(test_size, rng), root / name);
            test_manifest << name << "\n";
        }
        std::printf("wrote %d train + %d test images under %s\n", train_count, test_count,
                    out_dir.c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
