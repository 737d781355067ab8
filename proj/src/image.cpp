#include "mpm/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "mpm/rng.hpp"

namespace mpm {

namespace {

std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

// Skips whitespace and '#' comments in a PNM header.
void skip_header_space(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') {
                ++pos;
            }
        } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
}

int read_header_int(const std::string& s, std::size_t& pos, const std::filesystem::path& path) {
    skip_header_space(s, pos);
    std::size_t start = pos;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        ++pos;
    }
    if (start == pos) {
        throw FormatError(path.string() + ": malformed PNM header");
    }
    return std::stoi(s.substr(start, pos - start));
}

} // namespace

void write_ppm(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 3 && image.channels != 1) {
        throw ShapeError("write_ppm: need 1 or 3 channels");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::string row;
    row.reserve(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        row.clear();
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const int src = image.channels == 3 ? c : 0;
                row.push_back(static_cast<char>(to_byte(image.at(y, x, src))));
            }
        }
        out.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
        throw FormatError(path.string() + ": not a binary PPM/PGM");
    }
    const int channels = bytes[1] == '6' ? 3 : 1;
    std::size_t pos = 2;
    const int width = read_header_int(bytes, pos, path);
    const int height = read_header_int(bytes, pos, path);
    const int maxval = read_header_int(bytes, pos, path);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
        throw FormatError(path.string() + ": unsupported PNM dimensions or maxval");
    }
    ++pos; // single whitespace byte before the raster
    const std::size_t need = static_cast<std::size_t>(width) * height * channels;
    if (bytes.size() < pos + need) {
        throw TruncationError(path.string() + ": truncated raster");
    }
    Image img(height, width, channels);
    for (std::size_t k = 0; k < need; ++k) {
        img.pixels[k] = static_cast<float>(static_cast<unsigned char>(bytes[pos + k])) / static_cast<float>(maxval);
    }
    return img;
}

Image make_redundant_image(int height, int width, int patch, double duplicate_fraction, std::uint64_t seed) {
    if (patch <= 0 || height % patch != 0 || width % patch != 0) {
        throw ShapeError("make_redundant_image: dimensions must be divisible by the patch size");
    }
    Rng rng(seed);
    Image img(height, width, 3);
    const int gh = height / patch;
    const int gw = width / patch;
    const int n = gh * gw;
    const int n_dup = static_cast<int>(std::ceil(std::clamp(duplicate_fraction, 0.0, 1.0) * n));

    constexpr int kTemplates = 4;
    std::vector<std::vector<float>> templates(kTemplates);
    const std::size_t patch_len = static_cast<std::size_t>(patch) * patch * 3;
    for (auto& t : templates) {
        t.resize(patch_len);
        for (auto& v : t) {
            v = static_cast<float>(rng.uniform01());
        }
    }

    // Duplicates fill the first n_dup patches in raster order as one band per
    // template (flat regions such as sky or walls); the rest are noise.
    std::vector<int> source(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n_dup; ++i) {
        source[static_cast<std::size_t>(i)] = static_cast<int>((static_cast<long>(i) * kTemplates) / n_dup);
    }

    for (int p = 0; p < n; ++p) {
        const int py = (p / gw) * patch;
        const int px = (p % gw) * patch;
        const int src = source[static_cast<std::size_t>(p)];
        std::size_t k = 0;
        for (int y = 0; y < patch; ++y) {
            for (int x = 0; x < patch; ++x) {
                for (int c = 0; c < 3; ++c, ++k) {
                    img.at(py + y, px + x, c) =
                        src >= 0 ? templates[static_cast<std::size_t>(src)][k] : static_cast<float>(rng.uniform01());
                }
            }
        }
    }
    return img;
}

Image make_scene_image(int height, int width, std::uint64_t seed) {
    Rng rng(seed);
    Image img(height, width, 3);
    const int horizon = height / 2;

    struct Block {
        int x0, x1, top;
        float r, g, b;
    };
    std::vector<Block> blocks;
    for (int x = 0; x < width;) {
        const int w = width / 8 + static_cast<int>(rng.below(static_cast<std::uint64_t>(width / 6 + 1)));
        const int top = horizon - static_cast<int>(rng.below(static_cast<std::uint64_t>(horizon * 3 / 4 + 1)));
        const auto shade = static_cast<float>(rng.uniform(0.3, 0.8));
        blocks.push_back({x, std::min(width, x + w), top, shade, shade * 0.95f, shade * 0.9f});
        x += w + static_cast<int>(rng.below(static_cast<std::uint64_t>(width / 10 + 1)));
    }

    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            float r, g, b;
            if (y < horizon) {
                const float t = static_cast<float>(y) / static_cast<float>(horizon);
                r = 0.45f + 0.35f * t;
                g = 0.65f + 0.25f * t;
                b = 0.95f - 0.05f * t;
                for (const auto& blk : blocks) {
                    if (x >= blk.x0 && x < blk.x1 && y >= blk.top) {
                        // windows on a coarse lattice
                        const bool window = ((x - blk.x0) % 8 < 3) && ((y - blk.top) % 12 < 5);
                        const float k = window ? 0.6f : 1.0f;
                        r = blk.r * k;
                        g = blk.g * k;
                        b = blk.b * k;
                    }
                }
            } else {
                const float t = static_cast<float>(y - horizon) / static_cast<float>(height - horizon);
                const float stripe = 0.05f * std::sin(0.15f * static_cast<float>(x) + 0.4f * static_cast<float>(y));
                r = 0.35f + 0.1f * t + stripe;
                g = 0.33f + 0.1f * t + stripe;
                b = 0.30f + 0.1f * t + stripe;
            }
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    }
    return img;
}

Image degrade_to_night(const Image& image, const NightParams& params) {
    Rng rng(params.seed);
    Image out = image;
    for (auto& v : out.pixels) {
        double x = static_cast<double>(v) * params.luminosity;
        if (params.photons_per_unit > 0.0) {
            x = static_cast<double>(rng.poisson(x * params.photons_per_unit)) / params.photons_per_unit;
        }
        if (params.sigma > 0.0) {
            x += params.sigma * rng.normal();
        }
        v = static_cast<float>(std::clamp(x, 0.0, 1.0));
    }
    return out;
}

std::array<std::uint8_t, 3> cluster_color(std::uint32_t id) {
    // Composition of bijections on 24-bit integers.
    constexpr std::uint32_t kMask = 0xFFFFFFu;
    std::uint32_t x = (id + 0x5A3C1Fu) & kMask;
    x = (x * 0x9E3779u) & kMask; // odd multiplier
    x ^= x >> 12;
    x = (x * 0x2545F5u) & kMask;
    x ^= x >> 11;
    return {static_cast<std::uint8_t>(x >> 16), static_cast<std::uint8_t>(x >> 8), static_cast<std::uint8_t>(x)};
}

Image tint_patches(const Image& image, int patch, const MergeMap& map, double alpha) {
    if (patch <= 0 || image.height % patch != 0 || image.width % patch != 0) {
        throw ShapeError("tint_patches: image is not divisible into patches");
    }
    const int gh = image.height / patch;
    const int gw = image.width / patch;
    if (map.size() != static_cast<std::size_t>(gh) * gw) {
        throw ShapeError("tint_patches: map has " + std::to_string(map.size()) + " entries for a " +
                         std::to_string(gh) + "x" + std::to_string(gw) + " patch grid");
    }
    Image out(image.height, image.width, 3);
    const auto a = static_cast<float>(alpha);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const auto color = cluster_color(map[static_cast<std::size_t>((y / patch) * gw + x / patch)]);
            for (int c = 0; c < 3; ++c) {
                const float src = image.at(y, x, image.channels == 3 ? c : 0);
                const float tint = static_cast<float>(color[static_cast<std::size_t>(c)]) / 255.0f;
                out.at(y, x, c) = a == 1.0f ? tint : (1.0f - a) * src + a * tint;
            }
        }
    }
    return out;
}

} // namespace mpm
