#include "mpm/encoder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mpm/kernel.hpp"
#include "mpm/rng.hpp"
#include "parallel.hpp"

namespace mpm {

namespace {

using Clock = std::chrono::steady_clock;

class Stopwatch {
public:
    Stopwatch() : start_(Clock::now()) {}
    Seconds elapsed() const { return Clock::now() - start_; }

private:
    Clock::time_point start_;
};

void fill_normal(TokenMatrix& m, Rng& rng, double stddev) {
    float* p = m.data();
    for (Index k = 0; k < m.size(); ++k) {
        p[k] = static_cast<float>(rng.normal(0.0, stddev));
    }
}

void fill_normal(RowVector& v, Rng& rng, double stddev) {
    for (Index k = 0; k < v.size(); ++k) {
        v(k) = static_cast<float>(rng.normal(0.0, stddev));
    }
}

// Random Fourier features over the patch grid: entry k at cell (y, x) is
// sqrt(2/d) cos(wy_k y + wx_k x + phase_k). Each entry has variance 1/d like
// the other weights, and nearby cells get similar embeddings.
TokenMatrix fourier_position_embedding(Index grid_h, Index grid_w, Index d, Rng& rng) {
    constexpr double kFrequencyScale = 0.6; // radians per grid cell
    const double amplitude = std::sqrt(2.0 / static_cast<double>(d));
    std::vector<double> wy(static_cast<std::size_t>(d)), wx(wy.size()), phase(wy.size());
    for (std::size_t k = 0; k < wy.size(); ++k) {
        wy[k] = rng.normal(0.0, kFrequencyScale);
        wx[k] = rng.normal(0.0, kFrequencyScale);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    TokenMatrix pos(grid_h * grid_w, d);
    for (Index t = 0; t < pos.rows(); ++t) {
        const auto y = static_cast<double>(t / grid_w);
        const auto x = static_cast<double>(t % grid_w);
        for (Index k = 0; k < d; ++k) {
            const auto kk = static_cast<std::size_t>(k);
            pos(t, k) = static_cast<float>(amplitude * std::cos(wy[kk] * y + wx[kk] * x + phase[kk]));
        }
    }
    return pos;
}

Linear make_linear(Index in, Index out, Rng& rng, double stddev) {
    Linear l{TokenMatrix(in, out), RowVector(out)};
    fill_normal(l.weight, rng, stddev);
    fill_normal(l.bias, rng, stddev);
    return l;
}

void apply_linear(const TokenMatrix& x, const Linear& l, TokenMatrix& out) {
    out.resize(x.rows(), l.out_dim());
    out.noalias() = x * l.weight;
    out.rowwise() += l.bias;
}

void gelu_inplace(TokenMatrix& f) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    auto a = f.array();
    a = 0.5f * a * (1.0f + (kSqrt2OverPi * (a + 0.044715f * a.cube())).tanh());
}

// Softmax attention for one (possibly padded) sequence. qkv holds `rows`
// rows, the first `valid` of which are real keys.
template <typename QkvBlock, typename CtxBlock>
void attend(const QkvBlock& qkv, Index valid, int heads, CtxBlock ctx) {
    const Index rows = qkv.rows();
    const Index d = qkv.cols() / 3;
    const Index dh = d / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    TokenMatrix scores(rows, rows);
    for (int h = 0; h < heads; ++h) {
        const auto q = qkv.middleCols(h * dh, dh);
        const auto k = qkv.middleCols(d + h * dh, dh);
        const auto v = qkv.middleCols(2 * d + h * dh, dh);
        scores.noalias() = q * k.transpose();
        scores *= scale;
        if (valid < rows) {
            scores.rightCols(rows - valid).setConstant(-std::numeric_limits<float>::infinity());
        }
        const Eigen::VectorXf row_max = scores.rowwise().maxCoeff();
        scores.array() = (scores.colwise() - row_max).array().exp();
        const Eigen::VectorXf row_sum = scores.rowwise().sum();
        scores.array().colwise() /= row_sum.array();
        ctx.middleCols(h * dh, dh).noalias() = scores * v;
    }
}

} // namespace

void EncoderConfig::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid encoder config: " + what); };
    if (patch <= 0) fail("patch must be positive");
    if (image_h <= 0 || image_w <= 0) fail("image size must be positive");
    if (image_h % patch != 0 || image_w % patch != 0) fail("image size must be divisible by the patch size");
    if (channels <= 0) fail("channels must be positive");
    if (depth < 1) fail("depth must be at least 1");
    if (dim < 1 || heads < 1) fail("dim and heads must be positive");
    if (dim % heads != 0) fail("dim must be divisible by heads");
    if (ffn_mult < 1) fail("ffn_mult must be at least 1");
    if (n_special < 0) fail("n_special must be non-negative");
}

InsertionSchedule InsertionSchedule::parse(std::string_view text) {
    InsertionSchedule s;
    if (text.empty() || text == "none" || text == "[]") {
        return s;
    }
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto comma = text.find(',', pos);
        const auto field = text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
        int v = 0;
        const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
        if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
            throw ConfigError("bad schedule entry '" + std::string(field) + "'");
        }
        s.blocks.push_back(v);
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
        if (s.blocks[i] < 0 || (i > 0 && s.blocks[i] <= s.blocks[i - 1])) {
            throw ConfigError("schedule must be strictly increasing non-negative block indices");
        }
    }
    return s;
}

bool InsertionSchedule::contains(int block) const {
    return std::binary_search(blocks.begin(), blocks.end(), block);
}

void InsertionSchedule::validate(int depth) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i] < 0 || blocks[i] >= depth) {
            throw ConfigError("schedule index " + std::to_string(blocks[i]) + " outside [0, " + std::to_string(depth) +
                              ")");
        }
        if (i > 0 && blocks[i] <= blocks[i - 1]) {
            throw ConfigError("schedule must be strictly increasing");
        }
    }
}

std::string InsertionSchedule::to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        os << (i ? "," : "") << blocks[i];
    }
    return os.str();
}

Encoder init_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    const Index d = cfg.dim;
    const Index hidden = static_cast<Index>(cfg.ffn_mult) * d;

    Encoder enc;
    enc.config = cfg;
    enc.patch_proj = make_linear(static_cast<Index>(cfg.patch) * cfg.patch * cfg.channels, d, rng, stddev);
    enc.pos_embed = fourier_position_embedding(cfg.grid_h(), cfg.grid_w(), d, rng);
    enc.special.resize(cfg.n_special, d);
    fill_normal(enc.special, rng, stddev);

    enc.blocks.reserve(static_cast<std::size_t>(cfg.depth));
    for (int l = 0; l < cfg.depth; ++l) {
        BlockWeights b;
        b.ln1_gamma = RowVector::Ones(d);
        b.ln1_beta = RowVector::Zero(d);
        b.qkv = make_linear(d, 3 * d, rng, stddev);
        b.proj = make_linear(d, d, rng, stddev);
        b.ln2_gamma = RowVector::Ones(d);
        b.ln2_beta = RowVector::Zero(d);
        b.fc1 = make_linear(d, hidden, rng, stddev);
        b.fc2 = make_linear(hidden, d, rng, stddev);
        enc.blocks.push_back(std::move(b));
    }
    return enc;
}

TokenMatrix patch_embed(const Image& image, const Encoder& enc) {
    const auto& cfg = enc.config;
    const int p = cfg.patch;
    if (image.height % p != 0 || image.width % p != 0) {
        throw ShapeError("patch_embed: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " image is not divisible by patch " + std::to_string(p));
    }
    if (image.height != cfg.image_h || image.width != cfg.image_w || image.channels != cfg.channels) {
        throw ShapeError("patch_embed: image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         "x" + std::to_string(image.channels) + ", encoder expects " + std::to_string(cfg.image_h) +
                         "x" + std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels));
    }
    const Index gw = cfg.grid_w();
    const Index n = cfg.n_tokens();
    TokenMatrix patches(n, enc.patch_proj.in_dim());
    for (Index t = 0; t < n; ++t) {
        const int y0 = static_cast<int>(t / gw) * p;
        const int x0 = static_cast<int>(t % gw) * p;
        Index k = 0;
        for (int y = 0; y < p; ++y) {
            for (int x = 0; x < p; ++x) {
                for (int c = 0; c < image.channels; ++c) {
                    patches(t, k++) = image.at(y0 + y, x0 + x, c);
                }
            }
        }
    }
    TokenMatrix tokens;
    apply_linear(patches, enc.patch_proj, tokens);
    tokens += enc.pos_embed;
    return tokens;
}

TokenMatrix layer_norm(const TokenMatrix& x, const RowVector& gamma, const RowVector& beta) {
    const Eigen::VectorXf mean = x.rowwise().mean();
    TokenMatrix out = x.colwise() - mean;
    const Eigen::VectorXf inv_std =
        ((out.array().square().rowwise().sum() / static_cast<float>(x.cols())) + kLayerNormEps).rsqrt();
    out.array().colwise() *= inv_std.array();
    out.array().rowwise() *= gamma.array();
    out.rowwise() += beta;
    return out;
}

TokenMatrix multi_head_attention(const TokenMatrix& normed, const BlockWeights& w, int heads) {
    TokenMatrix qkv;
    apply_linear(normed, w.qkv, qkv);
    TokenMatrix ctx(normed.rows(), normed.cols());
    attend(qkv, qkv.rows(), heads, ctx.middleRows(0, ctx.rows()));
    TokenMatrix out;
    apply_linear(ctx, w.proj, out);
    return out;
}

void transformer_block_padded(TokenMatrix& x, Index stride, std::span<const Index> valid, const BlockWeights& w,
                              int heads, const BlockOptions& opts, int threads) {
    const Index d = x.cols();
    if (stride <= 0 || x.rows() != stride * static_cast<Index>(valid.size())) {
        throw ShapeError("transformer_block_padded: stacked rows do not match stride and batch size");
    }
    if (d != w.qkv.in_dim() || d % heads != 0) {
        throw ShapeError("transformer_block: token width does not match block weights");
    }
    if (opts.attention) {
        TokenMatrix qkv;
        apply_linear(layer_norm(x, w.ln1_gamma, w.ln1_beta), w.qkv, qkv);
        TokenMatrix ctx = TokenMatrix::Zero(x.rows(), d);
        detail::parallel_for(valid.size(), threads, [&](std::size_t b) {
            const Index off = static_cast<Index>(b) * stride;
            attend(qkv.middleRows(off, stride), valid[b], heads, ctx.middleRows(off, stride));
        });
        x.noalias() += ctx * w.proj.weight;
        x.rowwise() += w.proj.bias;
    }
    TokenMatrix hidden;
    apply_linear(layer_norm(x, w.ln2_gamma, w.ln2_beta), w.fc1, hidden);
    gelu_inplace(hidden);
    x.noalias() += hidden * w.fc2.weight;
    x.rowwise() += w.fc2.bias;
}

TokenMatrix transformer_block(const TokenMatrix& x, const BlockWeights& w, int heads, const BlockOptions& opts) {
    TokenMatrix out = x;
    const Index valid[] = {x.rows()};
    transformer_block_padded(out, x.rows(), valid, w, heads, opts, 1);
    return out;
}

BatchOutput forward_batch(std::span<const TokenMatrix> images, const Encoder& enc, const InsertionSchedule& schedule,
                          const ForwardOptions& opts) {
    const auto& cfg = enc.config;
    schedule.validate(cfg.depth);
    if (images.empty()) {
        throw ShapeError("forward_batch: empty batch");
    }
    const Index d = cfg.dim;
    const Index e = enc.special.rows();
    const std::size_t batch = images.size();

    std::vector<Index> n(batch);
    BatchOutput result;
    result.outputs.resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        if (images[b].cols() != d || images[b].rows() < 1) {
            throw ShapeError("forward_batch: image " + std::to_string(b) + " has shape " +
                             std::to_string(images[b].rows()) + "x" + std::to_string(images[b].cols()) +
                             ", expected Nx" + std::to_string(d));
        }
        n[b] = images[b].rows();
        result.outputs[b].composed_map = ComposedMap::identity(static_cast<std::size_t>(n[b]));
    }

    Index stride = e + *std::max_element(n.begin(), n.end());
    TokenMatrix stacked = TokenMatrix::Zero(static_cast<Index>(batch) * stride, d);
    for (std::size_t b = 0; b < batch; ++b) {
        const Index off = static_cast<Index>(b) * stride;
        stacked.middleRows(off, e) = enc.special;
        stacked.middleRows(off + e, n[b]) = images[b];
    }

    std::vector<Index> valid(batch);
    std::vector<TokenMatrix> merged(batch);
    for (int l = 0; l < cfg.depth; ++l) {
        if (schedule.contains(l)) {
            Stopwatch merge_clock;
            detail::parallel_for(batch, opts.threads, [&](std::size_t b) {
                Stopwatch own;
                auto& out = result.outputs[b];
                const Index off = static_cast<Index>(b) * stride;
                auto step = mpm_step(stacked.middleRows(off + e, n[b]));
                out.merge_lengths.push_back(n[b]);
                out.composed_map = compose(out.composed_map, step.map);
                merged[b] = std::move(step.merged);
                out.merge_time += own.elapsed();
            });
            const Index new_stride = e + std::max_element(merged.begin(), merged.end(), [](const auto& a, const auto& c) {
                                             return a.rows() < c.rows();
                                         })->rows();
            TokenMatrix repacked = TokenMatrix::Zero(static_cast<Index>(batch) * new_stride, d);
            for (std::size_t b = 0; b < batch; ++b) {
                const Index old_off = static_cast<Index>(b) * stride;
                const Index new_off = static_cast<Index>(b) * new_stride;
                repacked.middleRows(new_off, e) = stacked.middleRows(old_off, e);
                n[b] = merged[b].rows();
                repacked.middleRows(new_off + e, n[b]) = merged[b];
            }
            stacked = std::move(repacked);
            stride = new_stride;
            result.merge_time += merge_clock.elapsed();
        }
        for (std::size_t b = 0; b < batch; ++b) {
            valid[b] = e + n[b];
            result.outputs[b].per_block_lengths.push_back(valid[b]);
        }
        result.padded_lengths.push_back(stride);
        Stopwatch block_clock;
        transformer_block_padded(stacked, stride, valid, enc.blocks[static_cast<std::size_t>(l)], cfg.heads,
                                 opts.block, opts.threads);
        result.block_time += block_clock.elapsed();
    }

    for (std::size_t b = 0; b < batch; ++b) {
        auto& out = result.outputs[b];
        out.tokens = stacked.middleRows(static_cast<Index>(b) * stride, e + n[b]);
        out.block_time = result.block_time;
    }
    return result;
}

EncoderOutput forward_tokens(const TokenMatrix& image_tokens, const Encoder& enc, const InsertionSchedule& schedule,
                             const ForwardOptions& opts) {
    auto batch = forward_batch(std::span<const TokenMatrix>(&image_tokens, 1), enc, schedule, opts);
    auto out = std::move(batch.outputs.front());
    out.merge_time = batch.merge_time;
    return out;
}

EncoderOutput forward(const Image& image, const Encoder& enc, const InsertionSchedule& schedule,
                      const ForwardOptions& opts) {
    return forward_tokens(patch_embed(image, enc), enc, schedule, opts);
}

TokenMatrix expand_to_decoder_input(const EncoderOutput& out) {
    const Index e = out.n_special();
    const Index clusters = static_cast<Index>(out.composed_map.n_clusters());
    return assemble_decoder_input(out.tokens.topRows(e), reconstruct(out.tokens.bottomRows(clusters), out.composed_map));
}

PipelineResult run_pipeline(const Image& image, const Encoder& enc, const InsertionSchedule& schedule,
                            const ForwardOptions& opts) {
    PipelineResult r;
    Stopwatch embed_clock;
    const TokenMatrix tokens = patch_embed(image, enc);
    r.embed_time = embed_clock.elapsed();
    r.encoder = forward_tokens(tokens, enc, schedule, opts);
    Stopwatch rec_clock;
    r.decoder_input = expand_to_decoder_input(r.encoder);
    r.reconstruct_time = rec_clock.elapsed();
    return r;
}

} // namespace mpm
