#ifndef MPM_IMAGE_HPP
#define MPM_IMAGE_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mpm/types.hpp"

namespace mpm {

/// H x W x C image, interleaved channels, values nominally in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, int c = 3, float fill = 0.0f)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary PPM (P6, maxval 255). Values are clamped to [0, 1] and rounded.
void write_ppm(const Image& image, const std::filesystem::path& path);
/// Reads P6 (and P5 as a single channel, if present) with maxval <= 255.
Image read_ppm(const std::filesystem::path& path);

/// Random image where `duplicate_fraction` of the patches are exact copies
/// of a few template patches, laid out as contiguous raster bands, and the
/// rest are independent noise patches.
Image make_redundant_image(int height, int width, int patch, double duplicate_fraction, std::uint64_t seed);

/// Smooth synthetic outdoor scene: sky gradient, flat buildings, textured
/// ground. Used for the day/night experiment.
Image make_scene_image(int height, int width, std::uint64_t seed);

/// Simulated low light: scale luminosity, add shot noise (Poisson with
/// `photons_per_unit` expected counts at value 1.0) and Gaussian thermal
/// noise. photons_per_unit <= 0 disables shot noise; sigma 0 disables
/// thermal noise.
struct NightParams {
    double luminosity = 0.35;
    double sigma = 0.02;
    double photons_per_unit = 200.0;
    std::uint64_t seed = 0;
};
Image degrade_to_night(const Image& image, const NightParams& params);

/// Deterministic, injective RGB color for a cluster id below 2^24.
std::array<std::uint8_t, 3> cluster_color(std::uint32_t id);

/// Blends each patch toward its cluster color: out = (1-alpha)*pixel + alpha*tint.
/// With alpha = 1 every patch is its pure cluster color.
Image tint_patches(const Image& image, int patch, const MergeMap& map, double alpha);

} // namespace mpm

#endif
