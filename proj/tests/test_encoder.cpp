#include <doctest.h>

#include "mpm/encoder.hpp"
#include "mpm/kernel.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace mpm;

namespace {

EncoderConfig small_config(int size = 64, int depth = 6, int dim = 32, int heads = 4, int special = 1) {
    EncoderConfig cfg;
    cfg.image_h = cfg.image_w = size;
    cfg.patch = 8;
    cfg.depth = depth;
    cfg.dim = dim;
    cfg.heads = heads;
    cfg.n_special = special;
    cfg.seed = 5;
    return cfg;
}

Image random_image(const EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Image img(cfg.image_h, cfg.image_w, cfg.channels);
    for (auto& v : img.pixels) v = static_cast<float>(rng.uniform01());
    return img;
}

double checksum(const TokenMatrix& m) { return m.cast<double>().sum(); }

} // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(small_config().validate());
    auto bad = small_config();
    bad.image_h = 60;
    CHECK_THROWS_AS(init_encoder(bad), ConfigError);
    bad = small_config();
    bad.heads = 5;
    CHECK_THROWS_AS(init_encoder(bad), ConfigError);
    bad = small_config();
    bad.depth = 0;
    CHECK_THROWS_AS(init_encoder(bad), ConfigError);

    EncoderConfig tiny = small_config();
    tiny.dim = 8;
    tiny.heads = 2;
    CHECK(tiny.head_dim() == 4);
}

TEST_CASE("schedule parsing") {
    CHECK(InsertionSchedule::parse("2,5").blocks == std::vector<int>{2, 5});
    CHECK(InsertionSchedule::parse("").empty());
    CHECK(InsertionSchedule::parse("none").empty());
    CHECK(InsertionSchedule::standard().blocks == std::vector<int>{2, 5});
    CHECK_THROWS_AS(InsertionSchedule::parse("5,2"), ConfigError);
    CHECK_THROWS_AS(InsertionSchedule::parse("2,2"), ConfigError);
    CHECK_THROWS_AS(InsertionSchedule::parse("a"), ConfigError);
    CHECK_THROWS_AS(InsertionSchedule::parse("2,5").validate(5), ConfigError);
    CHECK_NOTHROW(InsertionSchedule::parse("2,5").validate(6));
}

TEST_CASE("init_encoder is deterministic and N(0, 1/d)") {
    const auto cfg = small_config();
    const Encoder a = init_encoder(cfg);
    const Encoder b = init_encoder(cfg);
    CHECK(test::bit_equal(a.patch_proj.weight, b.patch_proj.weight));
    CHECK(test::bit_equal(a.blocks.back().fc2.weight, b.blocks.back().fc2.weight));
    CHECK(checksum(a.patch_proj.weight) == checksum(b.patch_proj.weight));

    auto other = cfg;
    other.seed = 6;
    CHECK(checksum(init_encoder(other).patch_proj.weight) != checksum(a.patch_proj.weight));

    // 3 sigma bound on the sample mean over 1e5 weights
    EncoderConfig big = small_config(64, 1, 64, 4);
    const Encoder e = init_encoder(big);
    const auto& w = e.blocks[0].fc1.weight; // 64 x 256
    const auto& w2 = e.blocks[0].qkv.weight; // 64 x 192
    const double n = static_cast<double>(w.size() + w2.size());
    REQUIRE(n >= 1e4);
    const double mean = (w.cast<double>().sum() + w2.cast<double>().sum()) / n;
    const double sigma = 1.0 / std::sqrt(64.0);
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(n));
    const double var = (w.cast<double>().array().square().sum() + w2.cast<double>().array().square().sum()) / n;
    CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.05));
}

TEST_CASE("weight mean over 1e5 samples") {
    EncoderConfig cfg = small_config(64, 2, 96, 4);
    const Encoder e = init_encoder(cfg);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& b : e.blocks) {
        for (const auto* m : {&b.qkv.weight, &b.proj.weight, &b.fc1.weight, &b.fc2.weight}) {
            sum += m->cast<double>().sum();
            count += static_cast<std::size_t>(m->size());
        }
    }
    REQUIRE(count >= 100000);
    const double sigma_mean = (1.0 / std::sqrt(96.0)) / std::sqrt(static_cast<double>(count));
    CHECK(std::abs(sum / static_cast<double>(count)) < 3.0 * sigma_mean);
}

TEST_CASE("patch_embed") {
    EncoderConfig cfg = small_config(32);
    cfg.patch = 16;
    const Encoder enc = init_encoder(cfg);
    CHECK(patch_embed(random_image(cfg, 1), enc).rows() == 4);

    EncoderConfig vit = small_config(512, 1, 16, 2);
    vit.patch = 16;
    CHECK(vit.n_tokens() == 1024);
    CHECK(patch_embed(random_image(vit, 2), init_encoder(vit)).rows() == 1024);

    // zero image: projection contributes only its bias
    const TokenMatrix zero_tokens = patch_embed(Image(32, 32, 3, 0.0f), enc);
    for (Index i = 0; i < 4; ++i) {
        const Eigen::RowVectorXf expect = enc.patch_proj.bias + enc.pos_embed.row(i);
        CHECK(test::bit_equal(zero_tokens.row(i), expect));
    }

    CHECK_THROWS_AS(patch_embed(Image(30, 32, 3), enc), ShapeError);
    CHECK_THROWS_AS(patch_embed(Image(64, 64, 3), enc), ShapeError);
}

TEST_CASE("raster order of patch tokens") {
    EncoderConfig cfg = small_config(16, 1, 8, 2, 0);
    cfg.patch = 8; // 2x2 grid
    const Encoder enc = init_encoder(cfg);
    Image img(16, 16, 3, 0.0f);
    // light up only the top-right patch
    for (int y = 0; y < 8; ++y)
        for (int x = 8; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
    const TokenMatrix t = patch_embed(img, enc);
    const TokenMatrix z = patch_embed(Image(16, 16, 3, 0.0f), enc);
    CHECK(test::bit_equal(t.row(0), z.row(0)));
    CHECK_FALSE(test::bit_equal(t.row(1), z.row(1)));
    CHECK(test::bit_equal(t.row(2), z.row(2)));
    CHECK(test::bit_equal(t.row(3), z.row(3)));
}

TEST_CASE("transformer_block against the naive reference") {
    EncoderConfig cfg = small_config(16, 1, 16, 4, 0);
    Rng rng(77);
    for (int seed = 0; seed < 10; ++seed) {
        cfg.seed = static_cast<std::uint64_t>(seed);
        const Encoder enc = init_encoder(cfg);
        const auto& w = enc.blocks[0];
        const TokenMatrix x = test::random_tokens(rng, 8, 16, -2.0, 2.0);

        const TokenMatrix y = transformer_block(x, w, cfg.heads);
        CHECK(y.rows() == 8);
        CHECK(test::max_rel_error(y, oracle::naive_block(x, w, cfg.heads)) <= 1e-4);

        const TokenMatrix normed = layer_norm(x, w.ln1_gamma, w.ln1_beta);
        CHECK(test::max_rel_error(multi_head_attention(normed, w, cfg.heads),
                                  oracle::naive_attention(normed, w, cfg.heads)) <= 1e-4);
    }
}

TEST_CASE("attention special cases") {
    EncoderConfig cfg = small_config(16, 1, 16, 2, 0);
    const Encoder enc = init_encoder(cfg);
    const auto& w = enc.blocks[0];
    Rng rng(3);

    // one token: softmax over a single key is 1, so the output is V projected
    const TokenMatrix one = test::random_tokens(rng, 1, 16);
    const TokenMatrix v = one * w.qkv.weight.rightCols(16) + w.qkv.bias.rightCols(16);
    const TokenMatrix expect = v * w.proj.weight + w.proj.bias;
    CHECK(test::max_rel_error(multi_head_attention(one, w, 2), expect) <= 1e-6);
    CHECK(test::max_rel_error(oracle::naive_attention(one, w, 2), expect) <= 1e-6);

    // identical tokens: identical outputs at every position
    TokenMatrix same(5, 16);
    for (Index i = 0; i < 5; ++i) same.row(i) = one.row(0);
    const TokenMatrix att = multi_head_attention(same, w, 2);
    const TokenMatrix ref = oracle::naive_attention(same, w, 2);
    for (Index i = 1; i < 5; ++i) {
        CHECK(test::bit_equal(ref.row(i), ref.row(0)));
        CHECK(test::max_rel_error(att.row(i), att.row(0)) <= 1e-6);
    }

    // shape preserved for a range of lengths
    for (Index n : {1, 2, 7, 33}) {
        CHECK(transformer_block(test::random_tokens(rng, n, 16), w, 2).rows() == n);
    }
}

TEST_CASE("forward with an empty schedule is the plain encoder") {
    const auto cfg = small_config();
    const Encoder enc = init_encoder(cfg);
    const Image img = random_image(cfg, 9);
    const auto out = forward(img, enc, {});
    const Index n = cfg.n_tokens();
    CHECK(out.composed_map.map == MergeMap::identity(static_cast<std::size_t>(n)));
    CHECK(out.per_block_lengths == std::vector<Index>(static_cast<std::size_t>(cfg.depth), n + 1));
    CHECK(out.merge_lengths.empty());

    TokenMatrix x = assemble_decoder_input(enc.special, patch_embed(img, enc));
    for (const auto& b : enc.blocks) x = transformer_block(x, b, cfg.heads);
    CHECK(test::bit_equal(out.tokens, x));
}

TEST_CASE("forward merges image tokens only and lengths never grow") {
    auto cfg = small_config(64, 6, 32, 4, 2);
    const Encoder enc = init_encoder(cfg);
    const auto out = forward(random_image(cfg, 10), enc, InsertionSchedule::parse("0,2,5"));
    for (std::size_t l = 1; l < out.per_block_lengths.size(); ++l) {
        CHECK(out.per_block_lengths[l] <= out.per_block_lengths[l - 1]);
    }
    CHECK(out.merge_lengths.size() == 3);
    CHECK(out.tokens.rows() == 2 + static_cast<Index>(out.composed_map.n_clusters()));
    CHECK(out.composed_map.stages.size() == 3);
    CHECK(out.merge_time.count() > 0.0);
    CHECK(out.block_time.count() > 0.0);
}

TEST_CASE("mirrored halves reduce the sequence at the first block") {
    auto cfg = small_config(64, 2, 32, 4);
    const Encoder enc = init_encoder(cfg);
    Image img = random_image(cfg, 12);
    for (int y = 0; y < img.height; ++y)
        for (int x = img.width / 2; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    const auto out = forward(img, enc, InsertionSchedule::parse("0"));
    CHECK(static_cast<Index>(out.composed_map.n_clusters()) < cfg.n_tokens());
}

TEST_CASE("full pipeline restores the decoder input shape") {
    auto cfg = small_config(64, 6, 32, 4);
    const Encoder enc = init_encoder(cfg);
    const Index n = cfg.n_tokens();

    // a flat image: every patch identical
    const Image flat(64, 64, 3, 0.4f);
    const auto base = run_pipeline(flat, enc, {});
    const auto merged = run_pipeline(flat, enc, InsertionSchedule::standard());
    CHECK(base.decoder_input.rows() == n + 1);
    CHECK(merged.decoder_input.rows() == n + 1);
    CHECK(merged.decoder_input.cols() == cfg.dim);
    CHECK(merged.encoder.composed_map.n_clusters() < static_cast<std::uint32_t>(n));

    const auto& map = merged.encoder.composed_map.map;
    for (std::size_t i = 0; i < map.size(); ++i) {
        for (std::size_t j = i + 1; j < map.size(); ++j) {
            if (map[i] == map[j]) {
                REQUIRE(test::bit_equal(merged.decoder_input.row(1 + static_cast<Index>(i)),
                                        merged.decoder_input.row(1 + static_cast<Index>(j))));
            }
        }
    }
    // the class row passes through untouched by the gather
    CHECK(test::bit_equal(merged.decoder_input.row(0), merged.encoder.tokens.row(0)));
}

TEST_CASE("special tokens are isolated from merging when attention is off") {
    auto cfg = small_config(64, 6, 32, 4, 2);
    const Encoder enc = init_encoder(cfg);
    const Image img = random_image(cfg, 13);
    ForwardOptions opts;
    opts.block.attention = false;
    const auto base = forward(img, enc, {}, opts);
    const auto merged = forward(img, enc, InsertionSchedule::standard(), opts);
    REQUIRE(merged.composed_map.n_clusters() < static_cast<std::uint32_t>(cfg.n_tokens()));
    CHECK(test::bit_equal(base.tokens.topRows(2), merged.tokens.topRows(2)));
}

TEST_CASE("padded batch matches per-image forward") {
    auto cfg = small_config(64, 6, 32, 4);
    const Encoder enc = init_encoder(cfg);
    std::vector<TokenMatrix> inputs;
    for (int i = 0; i < 4; ++i) {
        Image img = random_image(cfg, 20 + static_cast<std::uint64_t>(i));
        if (i % 2 == 0) img = Image(64, 64, 3, 0.1f * static_cast<float>(i + 1));
        inputs.push_back(patch_embed(img, enc));
    }
    const auto schedule = InsertionSchedule::standard();
    ForwardOptions opts;
    opts.threads = 3;
    const auto batch = forward_batch(inputs, enc, schedule, opts);
    REQUIRE(batch.outputs.size() == 4);
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        const auto single = forward_tokens(inputs[b], enc, schedule);
        REQUIRE(batch.outputs[b].composed_map.map == single.composed_map.map);
        REQUIRE(batch.outputs[b].tokens.rows() == single.tokens.rows());
        CHECK((batch.outputs[b].tokens - single.tokens).cwiseAbs().maxCoeff() <= 1e-5f);
    }
    for (std::size_t l = 0; l < batch.padded_lengths.size(); ++l) {
        for (const auto& o : batch.outputs) CHECK(o.per_block_lengths[l] <= batch.padded_lengths[l]);
    }
}
