#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <png.h>

#include "dni/error.hpp"
#include "dni/prng.hpp"
#include "dni/tensor.hpp"

namespace dni {

// Grayscale images are tensors of shape [1, 1, h, w] with values in [0, 255].

struct NoiseModel {
    double sigma = 0.0; // standard deviation on the 0..255 intensity scale
    std::uint64_t seed = 0;
};

inline void check_image(const Tensor& img, const char* what) {
    const auto& s = img.shape();
    if (s.size() != 4 || s[0] != 1 || s[1] != 1) {
        throw Error(std::string(what) + ": expected a [1,1,h,w] grayscale image, got " +
                    Tensor::shape_str(s));
    }
}

/// img + sigma * g with g standard normal per pixel in row-major order from
/// Rng(seed). The result is intentionally not clamped; clamping happens only
/// at I/O boundaries.
inline Tensor add_noise(const Tensor& img, const NoiseModel& nm) {
    check_image(img, "add_noise");
    if (nm.sigma < 0.0) throw Error("add_noise: sigma must be non-negative");
    Rng rng(nm.seed);
    Tensor out = Tensor::zeros(img.shape());
    const std::int64_t n = img.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        out[i] = static_cast<float>(static_cast<double>(img[i]) + nm.sigma * rng.normal());
    }
    return out;
}

/// Clamp to [0, 255] without rounding.
inline Tensor clamp_image(const Tensor& img) {
    Tensor out = img;
    for (auto& v : out.values()) v = std::min(255.0f, std::max(0.0f, v));
    return out;
}

/// 10 * log10(255^2 / MSE) with MSE accumulated in double; equal images give
/// the +inf sentinel.
inline double psnr(const Tensor& ref, const Tensor& test) {
    if (!ref.same_shape(test)) {
        throw Error("psnr: shape mismatch " + Tensor::shape_str(ref.shape()) + " vs " +
                    Tensor::shape_str(test.shape()));
    }
    double se = 0.0;
    const std::int64_t n = ref.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(ref[i]) - static_cast<double>(test[i]);
        se += d * d;
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(n);
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {

inline Tensor image_from_bytes(const std::vector<std::uint8_t>& px, std::int64_t h, std::int64_t w) {
    std::vector<float> vals(px.size());
    for (std::size_t i = 0; i < px.size(); ++i) vals[i] = static_cast<float>(px[i]);
    return Tensor({1, 1, h, w}, std::move(vals));
}

/// ITU-R BT.601 luma, rounded half-to-even.
inline std::uint8_t bt601_luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const double y = 0.299 * r + 0.587 * g + 0.114 * b;
    const double rounded = std::nearbyint(y);
    return static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, rounded)));
}

inline Tensor load_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "'");
    std::string magic;
    in >> magic;
    if (magic != "P5") throw Error("'" + path.string() + "': only binary PGM (P5) is supported");
    auto next_int = [&](const char* what) {
        // skip whitespace and '#' comments
        int c = in.get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#') {
                while (c != EOF && c != '\n') c = in.get();
            }
            c = in.get();
        }
        long v = 0;
        bool any = false;
        while (c != EOF && std::isdigit(c)) {
            v = v * 10 + (c - '0');
            any = true;
            c = in.get();
        }
        if (!any) throw Error("'" + path.string() + "': corrupt PGM header (" + what + ")");
        return v;
    };
    const long w = next_int("width");
    const long h = next_int("height");
    const long maxval = next_int("maxval");
    if (w < 1 || h < 1) throw Error("'" + path.string() + "': bad PGM dimensions");
    if (maxval != 255) throw Error("'" + path.string() + "': PGM maxval must be 255");
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size())) {
        throw Error("'" + path.string() + "': truncated PGM payload");
    }
    return image_from_bytes(px, h, w);
}

inline void save_pgm(const std::vector<std::uint8_t>& px, std::int64_t h, std::int64_t w,
                     const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

inline Tensor load_png(const std::filesystem::path& path) {
    PngReadCloser c;
    c.fp = std::fopen(path.string().c_str(), "rb");
    if (!c.fp) throw Error("cannot open '" + path.string() + "'");
    c.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!c.png) throw Error("libpng init failed");
    c.info = png_create_info_struct(c.png);
    if (!c.info) throw Error("libpng init failed");
    if (setjmp(png_jmpbuf(c.png))) {
        throw Error("'" + path.string() + "': corrupt PNG");
    }
    png_init_io(c.png, c.fp);
    png_read_info(c.png, c.info);

    const png_uint_32 w = png_get_image_width(c.png, c.info);
    const png_uint_32 h = png_get_image_height(c.png, c.info);
    const int bit_depth = png_get_bit_depth(c.png, c.info);
    const int color_type = png_get_color_type(c.png, c.info);
    if (bit_depth == 16) throw Error("'" + path.string() + "': 16-bit PNG is not supported");

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(c.png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(c.png);
    if (png_get_valid(c.png, c.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(c.png);
    png_read_update_info(c.png, c.info);

    const int channels = png_get_channels(c.png, c.info);
    const std::size_t rowbytes = png_get_rowbytes(c.png, c.info);
    std::vector<std::uint8_t> raw(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raw.data() + y * rowbytes;
    png_read_image(c.png, rows.data());
    png_read_end(c.png, nullptr);

    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h);
    for (png_uint_32 y = 0; y < h; ++y) {
        const std::uint8_t* row = raw.data() + y * rowbytes;
        for (png_uint_32 x = 0; x < w; ++x) {
            const std::uint8_t* p = row + static_cast<std::size_t>(x) * channels;
            std::uint8_t v;
            switch (channels) {
            case 1: v = p[0]; break;
            case 2: v = p[0]; break; // gray + alpha, alpha ignored
            case 3:
            case 4: v = bt601_luma(p[0], p[1], p[2]); break;
            default: throw Error("'" + path.string() + "': unsupported PNG channel count");
            }
            px[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    return image_from_bytes(px, h, w);
}

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

inline void save_png(const std::vector<std::uint8_t>& px, std::int64_t h, std::int64_t w,
                     const std::filesystem::path& path) {
    PngWriteCloser c;
    c.fp = std::fopen(path.string().c_str(), "wb");
    if (!c.fp) throw Error("cannot open '" + path.string() + "' for writing");
    c.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!c.png) throw Error("libpng init failed");
    c.info = png_create_info_struct(c.png);
    if (!c.info) throw Error("libpng init failed");
    if (setjmp(png_jmpbuf(c.png))) {
        throw Error("PNG write failed for '" + path.string() + "'");
    }
    png_init_io(c.png, c.fp);
    png_set_IHDR(c.png, c.info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(c.png, c.info);
    for (std::int64_t y = 0; y < h; ++y) {
        png_write_row(c.png, const_cast<png_bytep>(px.data() + y * w));
    }
    png_write_end(c.png, nullptr);
}

} // namespace detail

/// Loads an 8-bit grayscale PNG or binary PGM; color PNG inputs are converted
/// through BT.601 luma.
inline Tensor load_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw Error("cannot open '" + path.string() + "'");
    char magic[2] = {0, 0};
    probe.read(magic, 2);
    probe.close();
    if (magic[0] == 'P' && magic[1] == '5') return detail::load_pgm(path);
    if (static_cast<unsigned char>(magic[0]) == 0x89 && magic[1] == 'P') return detail::load_png(path);
    throw Error("'" + path.string() + "': unsupported image format (expected PNG or P5 PGM)");
}

/// Clamps to [0,255], rounds half-to-even, and writes PNG or PGM by extension.
inline void save_image(const Tensor& img, const std::filesystem::path& path) {
    check_image(img, "save_image");
    const std::int64_t h = img.dim(2);
    const std::int64_t w = img.dim(3);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(h * w));
    for (std::int64_t i = 0; i < h * w; ++i) {
        const double v = std::nearbyint(std::min(255.0, std::max(0.0, static_cast<double>(img[i]))));
        px[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
    }
    const std::string ext = path.extension().string();
    if (ext == ".pgm") {
        detail::save_pgm(px, h, w, path);
    } else if (ext == ".png") {
        detail::save_png(px, h, w, path);
    } else {
        throw Error("save_image: unsupported extension '" + ext + "' (use .png or .pgm)");
    }
}

/// Dataset manifest: one image path per line, '#' starts a comment, blank
/// lines ignored. Relative paths resolve against the manifest's directory.
inline std::vector<std::filesystem::path> load_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw Error("cannot open manifest '" + manifest.string() + "'");
    const std::filesystem::path base = manifest.parent_path();
    std::vector<std::filesystem::path> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t start = 0;
        while (start < line.size() && std::isspace(static_cast<unsigned char>(line[start]))) ++start;
        line.erase(0, start);
        if (line.empty()) continue;
        std::filesystem::path p(line);
        out.push_back(p.is_absolute() ? p : base / p);
    }
    if (out.empty()) throw Error("manifest '" + manifest.string() + "' lists no images");
    return out;
}

inline std::vector<Tensor> load_images(const std::vector<std::filesystem::path>& paths) {
    std::vector<Tensor> imgs;
    imgs.reserve(paths.size());
    for (const auto& p : paths) imgs.push_back(load_image(p));
    return imgs;
}

} // namespace dni
