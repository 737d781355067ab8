#include "mpm/token_io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string_view>

namespace mpm {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

constexpr std::size_t kHeaderBytes = 12;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& bytes, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

// Returns the two header counts after checking magic and minimum length.
std::pair<std::uint32_t, std::uint32_t> parse_header(const std::string& bytes, std::string_view magic,
                                                     const std::filesystem::path& path) {
    if (bytes.size() < 4 || std::string_view(bytes.data(), 4) != magic) {
        throw FormatError(path.string() + ": bad magic, expected " + std::string(magic));
    }
    if (bytes.size() < kHeaderBytes) {
        throw TruncationError(path.string() + ": truncated header");
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    return {get_u32(p + 4), get_u32(p + 8)};
}

} // namespace

TokenMatrix read_token_file(const std::filesystem::path& path) {
    const std::string bytes = slurp(path);
    const auto [rows, cols] = parse_header(bytes, "MPMT", path);
    if (rows == 0 || cols == 0) {
        throw FormatError(path.string() + ": empty token matrix");
    }
    const std::uint64_t payload = 4ULL * rows * cols;
    if (bytes.size() - kHeaderBytes < payload) {
        throw TruncationError(path.string() + ": payload has " + std::to_string(bytes.size() - kHeaderBytes) +
                              " bytes, header requires " + std::to_string(payload));
    }
    if (bytes.size() - kHeaderBytes > payload) {
        throw FormatError(path.string() + ": trailing bytes after payload");
    }
    TokenMatrix m(rows, cols);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes;
    float* dst = m.data();
    for (std::uint64_t k = 0; k < std::uint64_t{rows} * cols; ++k) {
        dst[k] = std::bit_cast<float>(get_u32(p + 4 * k));
    }
    require_finite(m, path.string().c_str());
    return m;
}

void write_token_file(const TokenMatrix& m, const std::filesystem::path& path) {
    if (m.rows() == 0 || m.cols() == 0) {
        throw ShapeError("write_token_file: empty matrix");
    }
    require_finite(m, "write_token_file");
    std::string bytes = "MPMT";
    bytes.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(m.size()));
    put_u32(bytes, static_cast<std::uint32_t>(m.rows()));
    put_u32(bytes, static_cast<std::uint32_t>(m.cols()));
    const float* src = m.data();
    for (Index k = 0; k < m.size(); ++k) {
        put_u32(bytes, std::bit_cast<std::uint32_t>(src[k]));
    }
    dump(bytes, path);
}

TokenMatrix read_token_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<float> values;
    std::size_t cols = 0;
    std::size_t rows = 0;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        std::size_t count = 0;
        std::stringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) {
            const auto b = field.find_first_not_of(" \t");
            const auto e = field.find_last_not_of(" \t");
            if (b == std::string::npos) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": empty field");
            }
            float v = 0.0f;
            const char* first = field.data() + b;
            const char* last = field.data() + e + 1;
            const auto res = std::from_chars(first, last, v);
            if (res.ec != std::errc() || res.ptr != last) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not a number: " + field);
            }
            values.push_back(v);
            ++count;
        }
        if (cols == 0) {
            cols = count;
        } else if (count != cols) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) +
                              " columns, got " + std::to_string(count));
        }
        ++rows;
    }
    if (rows == 0) {
        throw FormatError(path.string() + ": no tokens");
    }
    TokenMatrix m = Eigen::Map<TokenMatrix>(values.data(), static_cast<Index>(rows), static_cast<Index>(cols));
    require_finite(m, path.string().c_str());
    return m;
}

TokenMatrix read_tokens(const std::filesystem::path& path) {
    if (path.extension() == ".csv") {
        return read_token_csv(path);
    }
    return read_token_file(path);
}

MergeMap read_map_file(const std::filesystem::path& path) {
    const std::string bytes = slurp(path);
    const auto [n, clusters] = parse_header(bytes, "MPMM", path);
    const std::uint64_t payload = 4ULL * n;
    if (bytes.size() - kHeaderBytes < payload) {
        throw TruncationError(path.string() + ": truncated map payload");
    }
    if (bytes.size() - kHeaderBytes > payload) {
        throw FormatError(path.string() + ": trailing bytes after map payload");
    }
    MergeMap map;
    map.n_clusters = clusters;
    map.entries.resize(n);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kHeaderBytes;
    for (std::uint32_t i = 0; i < n; ++i) {
        map.entries[i] = get_u32(p + 4 * static_cast<std::size_t>(i));
    }
    // Composed maps are legal here, so only surjectivity and ordering apply.
    validate_merge_map(map, 0);
    return map;
}

void write_map_file(const MergeMap& map, const std::filesystem::path& path) {
    std::string bytes = "MPMM";
    put_u32(bytes, static_cast<std::uint32_t>(map.size()));
    put_u32(bytes, map.n_clusters);
    for (auto e : map.entries) {
        put_u32(bytes, e);
    }
    dump(bytes, path);
}

} // namespace mpm
