#include "litevla/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace litevla {

SceneImage SceneImage::from_unit_range(std::size_t h, std::size_t w, std::span<const float> values) {
    if (values.size() != h * w * kChannels) throw ImageError("image value count does not match its size");
    SceneImage img(h, w);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float v = values[i];
        img.data[i] = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
    }
    return img;
}

NormalizationStats::NormalizationStats(std::array<float, 3> mean, std::array<float, 3> stddev)
    : mean_(mean), std_(stddev) {
    for (std::size_t c = 0; c < 3; ++c) {
        if (!(std_[c] > 0.0f) || !std::isfinite(std_[c]) || !std::isfinite(mean_[c])) {
            throw std::invalid_argument("normalization sigma for channel " + std::to_string(c) +
                                        " must be positive and finite");
        }
    }
}

NormalizationStats NormalizationStats::from_images(std::span<const SceneImage> images) {
    std::array<double, 3> sum{}, sq{};
    double count = 0.0;
    for (const auto& img : images) {
        for (std::size_t i = 0; i < img.data.size(); i += 3) {
            for (std::size_t c = 0; c < 3; ++c) {
                sum[c] += img.data[i + c];
                sq[c] += static_cast<double>(img.data[i + c]) * img.data[i + c];
            }
        }
        count += static_cast<double>(img.height * img.width);
    }
    if (count == 0.0) throw std::invalid_argument("cannot compute statistics of an empty image set");
    std::array<float, 3> mean{}, stddev{};
    for (std::size_t c = 0; c < 3; ++c) {
        const double m = sum[c] / count;
        const double var = std::max(0.0, sq[c] / count - m * m);
        mean[c] = static_cast<float>(m);
        stddev[c] = static_cast<float>(std::sqrt(var));
    }
    return NormalizationStats(mean, stddev);
}

SceneImage resize_bilinear(const SceneImage& img, std::size_t out_h, std::size_t out_w) {
    if (img.height == 0 || img.width == 0) throw ImageError("cannot resize an empty image");
    if (img.height == out_h && img.width == out_w) return img;
    SceneImage out(out_h, out_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(out_w);
    auto axis = [](std::size_t dst, double scale, std::size_t in) {
        double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(src));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        return std::tuple{i0, i1, src - static_cast<double>(i0)};
    };
    for (std::size_t y = 0; y < out_h; ++y) {
        const auto [y0, y1, fy] = axis(y, sy, img.height);
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto [x0, x1, fx] = axis(x, sx, img.width);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1.0 - fx) * img.at(y0, x0, c) + fx * img.at(y0, x1, c);
                const double bot = (1.0 - fx) * img.at(y1, x0, c) + fx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

SceneImage normalize(const SceneImage& img, const NormalizationStats& stats) {
    SceneImage out = img;
    for (std::size_t i = 0; i < out.data.size(); i += 3) {
        for (std::size_t c = 0; c < 3; ++c) {
            out.data[i + c] = (img.data[i + c] - stats.mean()[c]) / stats.stddev()[c];
        }
    }
    return out;
}

SceneImage flip_horizontal(const SceneImage& img) {
    SceneImage out(img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
        }
    }
    return out;
}

namespace {

struct PngReadState {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
    auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
    if (st->pos + n > st->bytes.size()) png_error(png, "truncated PNG");
    std::memcpy(out, st->bytes.data() + st->pos, n);
    st->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void png_error_cb(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    if (err) *err = msg;
    png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const SceneImage& img) {
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
    if (!png) throw ImageError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    std::vector<png_byte> rowbuf(img.width * 3);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageError("PNG encode failed: " + err);
    }
    png_set_write_fn(png, &out, png_write_cb, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t i = 0; i < img.width * 3; ++i) {
            const float v = std::clamp(img.data[y * img.width * 3 + i], 0.0f, 1.0f);
            rowbuf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
        }
        png_write_row(png, rowbuf.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

SceneImage decode_png(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw ImageError("not a PNG file");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
    if (!png) throw ImageError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    PngReadState st{bytes, 0};
    SceneImage img;
    std::vector<png_byte> rowbuf;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageError("corrupt PNG: " + err);
    }
    png_set_read_fn(png, &st, png_read_cb);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    if (png_get_channels(png, info) != 3) png_error(png, "unsupported channel layout");
    img = SceneImage(h, w);
    rowbuf.resize(png_get_rowbytes(png, info));
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (std::size_t i = 0; i < static_cast<std::size_t>(w) * 3; ++i) {
            img.data[y * w * 3 + i] = static_cast<float>(rowbuf[i]) / 255.0f;
        }
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError("cannot open image " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void dump(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}

}  // namespace

void write_png(const std::filesystem::path& path, const SceneImage& img) { dump(path, encode_png(img)); }

SceneImage read_png(const std::filesystem::path& path) {
    try {
        return decode_png(slurp(path));
    } catch (const ImageError& e) {
        throw ImageError(path.string() + ": " + e.what());
    }
}

void write_raw_image(const std::filesystem::path& path, const SceneImage& img) {
    std::vector<std::uint8_t> b = {'L', 'V', 'I', 'M'};
    put_u32(b, static_cast<std::uint32_t>(img.height));
    put_u32(b, static_cast<std::uint32_t>(img.width));
    put_u32(b, 3);
    for (float v : img.data) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(b, bits);
    }
    dump(path, b);
}

SceneImage read_raw_image(const std::filesystem::path& path) {
    const auto b = slurp(path);
    if (b.size() < 16 || std::memcmp(b.data(), "LVIM", 4) != 0) throw ImageError(path.string() + ": bad raw image header");
    const std::size_t h = get_u32(b, 4), w = get_u32(b, 8), c = get_u32(b, 12);
    if (c != 3 || b.size() != 16 + 4 * h * w * c) throw ImageError(path.string() + ": raw image size mismatch");
    SceneImage img(h, w);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const std::uint32_t bits = get_u32(b, 16 + 4 * i);
        std::memcpy(&img.data[i], &bits, 4);
        if (!std::isfinite(img.data[i])) throw ImageError(path.string() + ": non-finite pixel");
    }
    return img;
}

SceneImage load_image(const std::filesystem::path& path) {
    if (path.extension() == ".bin") return read_raw_image(path);
    return read_png(path);
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= bytes.size(); i += 3) {
        const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    if (const std::size_t rem = bytes.size() - i; rem > 0) {
        std::uint32_t v = bytes[i] << 16;
        if (rem == 2) v |= bytes[i + 1] << 8;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += rem == 2 ? kAlphabet[(v >> 6) & 63] : '=';
        out += '=';
    }
    return out;
}

}  // namespace litevla
