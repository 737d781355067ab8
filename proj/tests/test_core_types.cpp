#include <doctest.h>

#include <fstream>
#include <limits>

#include "mpm/rng.hpp"
#include "mpm/token_io.hpp"
#include "test_util.hpp"

using namespace mpm;

namespace {

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string header(const char* magic, std::uint32_t a, std::uint32_t b) {
    std::string s(magic, 4);
    for (auto v : {a, b}) {
        for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    return s;
}

std::string f32_le(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    std::string s;
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
    return s;
}

} // namespace

TEST_CASE("token file: hand-built 2x3 file decodes to its values") {
    const auto dir = test::scratch_dir("types_hand");
    std::string bytes = header("MPMT", 2, 3);
    const float vals[] = {1.0f, -2.5f, 3.25f, 0.0f, 1e-3f, -7.0f};
    for (float v : vals) bytes += f32_le(v);
    write_raw(dir / "a.mpmt", bytes);

    const TokenMatrix m = read_token_file(dir / "a.mpmt");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    CHECK(m(0, 1) == -2.5f);
    CHECK(m(1, 1) == 1e-3f);
    CHECK(m(1, 2) == -7.0f);
}

TEST_CASE("token file: 1x1 zero matrix is 16 bytes") {
    const auto dir = test::scratch_dir("types_size");
    TokenMatrix m(1, 1);
    m(0, 0) = 0.0f;
    write_token_file(m, dir / "z.mpmt");
    CHECK(std::filesystem::file_size(dir / "z.mpmt") == 16);
    CHECK(read_token_file(dir / "z.mpmt") == m);
}

TEST_CASE("token file: error paths") {
    const auto dir = test::scratch_dir("types_err");

    write_raw(dir / "magic.mpmt", header("XXXX", 1, 1) + f32_le(1.0f));
    CHECK_THROWS_AS(read_token_file(dir / "magic.mpmt"), FormatError);

    write_raw(dir / "short.mpmt", header("MPMT", 2, 2) + f32_le(1.0f));
    CHECK_THROWS_AS(read_token_file(dir / "short.mpmt"), TruncationError);

    write_raw(dir / "nan.mpmt", header("MPMT", 1, 2) + f32_le(1.0f) + f32_le(std::numeric_limits<float>::quiet_NaN()));
    CHECK_THROWS_AS(read_token_file(dir / "nan.mpmt"), DataError);

    write_raw(dir / "inf.mpmt", header("MPMT", 1, 1) + f32_le(std::numeric_limits<float>::infinity()));
    CHECK_THROWS_AS(read_token_file(dir / "inf.mpmt"), DataError);

    CHECK_THROWS_AS(read_token_file(dir / "missing.mpmt"), IoError);
    CHECK_THROWS_AS(write_token_file(TokenMatrix::Ones(1, 1), dir / "no_such_dir" / "x.mpmt"), IoError);
}

TEST_CASE("token file: seeded round trip is bit-exact") {
    const auto dir = test::scratch_dir("types_roundtrip");
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = 1 + static_cast<Index>(rng.below(40));
        const Index d = 1 + static_cast<Index>(rng.below(24));
        TokenMatrix m = test::random_tokens(rng, n, d, -1e6, 1e6);
        // include awkward values: denormals, signed zero
        m(0, 0) = std::numeric_limits<float>::denorm_min();
        if (m.size() > 1) m.data()[1] = -0.0f;
        write_token_file(m, dir / "r.mpmt");
        const TokenMatrix back = read_token_file(dir / "r.mpmt");
        REQUIRE(test::bit_equal(back, m));
    }
}

TEST_CASE("csv ingestion infers width from the first line") {
    const auto dir = test::scratch_dir("types_csv");
    {
        std::ofstream out(dir / "t.csv");
        out << "1, 2, 3\n4,5,6\r\n\n";
    }
    const TokenMatrix m = read_tokens(dir / "t.csv");
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    CHECK(m(1, 2) == 6.0f);

    {
        std::ofstream out(dir / "bad.csv");
        out << "1,2\n3\n";
    }
    CHECK_THROWS_AS(read_tokens(dir / "bad.csv"), FormatError);
}

TEST_CASE("map file round trip and validation on read") {
    const auto dir = test::scratch_dir("types_map");
    const MergeMap m({0, 0, 1, 2, 1}, 3);
    write_map_file(m, dir / "m.mpmm");
    CHECK(std::filesystem::file_size(dir / "m.mpmm") == 12 + 5 * 4);
    CHECK(read_map_file(dir / "m.mpmm") == m);

    write_map_file(MergeMap({1, 0}, 2), dir / "bad.mpmm");
    CHECK_THROWS_AS(read_map_file(dir / "bad.mpmm"), InvalidMapError);
}

TEST_CASE("merge map validator") {
    CHECK(is_valid_merge_map(MergeMap({0, 1, 0, 2}, 3)));
    CHECK(is_valid_merge_map(MergeMap::identity(5)));
    CHECK_FALSE(is_valid_merge_map(MergeMap({0, 2, 1}, 3)));    // out of order
    CHECK_FALSE(is_valid_merge_map(MergeMap({0, 0, 0}, 1)));    // cluster of three
    CHECK(is_valid_merge_map(MergeMap({0, 0, 0}, 1), 0));       // allowed for composed maps
    CHECK_FALSE(is_valid_merge_map(MergeMap({0, 1}, 3)));       // not surjective
    CHECK_FALSE(is_valid_merge_map(MergeMap({0, 5}, 2)));       // id out of range
    CHECK_THROWS_AS(validate_merge_map(MergeMap({1}, 2)), InvalidMapError);
}

TEST_CASE("rng: splitmix64 reference outputs") {
    // First outputs for seed 0 and 1234567 from the published SplitMix64.
    Rng a(0);
    CHECK(a.next() == 0xE220A8397B1DCDAFULL);
    CHECK(a.next() == 0x6E789E6AA1B965F4ULL);
    Rng b(1234567);
    CHECK(b.next() == 6457827717110365317ULL);
    CHECK(b.next() == 3203168211198807973ULL);

    Rng c(42);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform01();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
}

TEST_CASE("rng: poisson mean and variance") {
    Rng rng(3);
    for (double mean : {0.5, 4.0, 80.0}) {
        double sum = 0.0, sq = 0.0;
        const int n = 20000;
        for (int i = 0; i < n; ++i) {
            const auto k = static_cast<double>(rng.poisson(mean));
            sum += k;
            sq += k * k;
        }
        const double m = sum / n;
        const double var = sq / n - m * m;
        CHECK(std::abs(m - mean) < 5.0 * std::sqrt(mean / n));
        CHECK(var == doctest::Approx(mean).epsilon(0.1));
    }
}
