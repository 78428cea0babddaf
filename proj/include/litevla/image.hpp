#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace litevla {

// Interleaved HWC image with 3 channels.
struct SceneImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    static constexpr std::size_t kChannels = 3;

    SceneImage() = default;
    SceneImage(std::size_t h, std::size_t w) : height(h), width(w), data(h * w * kChannels, 0.0f) {}

    // Copies `values` and clamps every element into [0, 1].
    static SceneImage from_unit_range(std::size_t h, std::size_t w, std::span<const float> values);

    float& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * kChannels + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * kChannels + c]; }

    bool operator==(const SceneImage&) const = default;
};

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Per-channel normalisation constants; construction rejects sigma <= 0.
class NormalizationStats {
public:
    NormalizationStats() = default;
    NormalizationStats(std::array<float, 3> mean, std::array<float, 3> stddev);

    const std::array<float, 3>& mean() const { return mean_; }
    const std::array<float, 3>& stddev() const { return std_; }

    // Population mean and standard deviation over all pixels of `images`.
    static NormalizationStats from_images(std::span<const SceneImage> images);

    bool operator==(const NormalizationStats&) const = default;

private:
    std::array<float, 3> mean_{0.0f, 0.0f, 0.0f};
    std::array<float, 3> std_{1.0f, 1.0f, 1.0f};
};

// Half-pixel-centre bilinear resize (edge samples clamped).
SceneImage resize_bilinear(const SceneImage& img, std::size_t out_h, std::size_t out_w);
SceneImage normalize(const SceneImage& img, const NormalizationStats& stats);
SceneImage flip_horizontal(const SceneImage& img);

// 8-bit RGB PNG. Values are clamped to [0, 1] and rounded to 1/255.
std::vector<std::uint8_t> encode_png(const SceneImage& img);
SceneImage decode_png(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const SceneImage& img);
SceneImage read_png(const std::filesystem::path& path);

// Raw tensor blob: "LVIM" | u32 height | u32 width | u32 channels | f32 LE values.
void write_raw_image(const std::filesystem::path& path, const SceneImage& img);
SceneImage read_raw_image(const std::filesystem::path& path);

// Dispatches on extension (.png or .bin).
SceneImage load_image(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);

}  // namespace litevla
