#ifndef MPM_ENCODER_HPP
#define MPM_ENCODER_HPP

// Minimal ViT-style encoder used as the workload for merge experiments:
// patch embedding, learned-style absolute positional embedding, special
// tokens in front, then pre-norm transformer blocks. Weights are synthetic
// and drawn from the seeded generator; there is no decoder.

#include <chrono>
#include <span>
#include <string_view>
#include <vector>

#include "mpm/image.hpp"
#include "mpm/reconstruction.hpp"
#include "mpm/types.hpp"

namespace mpm {

using RowVector = Eigen::Matrix<float, 1, Eigen::Dynamic>;
using Seconds = std::chrono::duration<double>;

struct EncoderConfig {
    int image_h = 512;
    int image_w = 512;
    int channels = 3;
    int patch = 16;
    int depth = 12;
    int dim = 192;
    int heads = 3;
    int ffn_mult = 4;
    int n_special = 1;
    std::uint64_t seed = 0;

    Index grid_h() const { return image_h / patch; }
    Index grid_w() const { return image_w / patch; }
    Index n_tokens() const { return grid_h() * grid_w(); }
    Index head_dim() const { return dim / heads; }

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
};

/// Sorted, distinct 0-based block indices before which a merge step runs.
struct InsertionSchedule {
    std::vector<int> blocks;

    static InsertionSchedule standard() { return {{2, 5}}; }
    /// "2,5" -> {2, 5}; "" or "none" -> {}.
    static InsertionSchedule parse(std::string_view text);

    bool empty() const { return blocks.empty(); }
    bool contains(int block) const;
    void validate(int depth) const;
    std::string to_string() const;
};

struct Linear {
    TokenMatrix weight; // in x out
    RowVector bias;

    Index in_dim() const { return weight.rows(); }
    Index out_dim() const { return weight.cols(); }
};

struct BlockWeights {
    RowVector ln1_gamma, ln1_beta;
    Linear qkv;  // d -> 3d, columns [q | k | v], heads contiguous within each
    Linear proj; // d -> d
    RowVector ln2_gamma, ln2_beta;
    Linear fc1; // d -> ffn_mult * d
    Linear fc2; // ffn_mult * d -> d
};

struct Encoder {
    EncoderConfig config;
    Linear patch_proj;     // P*P*C -> d
    TokenMatrix pos_embed; // N x d
    TokenMatrix special;   // E x d
    std::vector<BlockWeights> blocks;
};

/// Draws every weight matrix and bias from N(0, 1/d) in a fixed order.
/// Layer-norm scales start at 1 and shifts at 0.
Encoder init_encoder(const EncoderConfig& cfg);

/// Flattens each P x P x C patch (row, column, channel order), projects it
/// and adds the positional embedding. Output rows are in raster order.
TokenMatrix patch_embed(const Image& image, const Encoder& enc);

/// Test hooks for the block computation.
struct BlockOptions {
    /// When false the attention branch contributes nothing, so tokens no
    /// longer interact.
    bool attention = true;
};

inline constexpr float kLayerNormEps = 1e-6f;

TokenMatrix layer_norm(const TokenMatrix& x, const RowVector& gamma, const RowVector& beta);

/// Attention branch only: softmax(Q K^T / sqrt(dh)) V per head, followed by
/// the output projection. `normed` is the layer-normed block input.
TokenMatrix multi_head_attention(const TokenMatrix& normed, const BlockWeights& w, int heads);

/// x + MSA(LN(x)), then + FFN(LN(.)).
TokenMatrix transformer_block(const TokenMatrix& x, const BlockWeights& w, int heads, const BlockOptions& opts = {});

/// A padded batch: `stride` rows per sequence, of which the first valid[b]
/// are real. Padding keys get -inf logits. Updates `stacked` in place.
void transformer_block_padded(TokenMatrix& stacked, Index stride, std::span<const Index> valid, const BlockWeights& w,
                              int heads, const BlockOptions& opts = {}, int threads = 1);

struct ForwardOptions {
    BlockOptions block;
    int threads = 1;
};

struct EncoderOutput {
    TokenMatrix tokens; // (E + N') x d
    ComposedMap composed_map;
    std::vector<Index> per_block_lengths; // E + image tokens entering each block
    std::vector<Index> merge_lengths;     // image tokens entering each merge step
    Seconds merge_time{0};
    Seconds block_time{0};

    Index n_special() const { return tokens.rows() - static_cast<Index>(composed_map.n_clusters()); }
};

/// Runs the blocks on already embedded image tokens (special tokens are
/// prepended here).
EncoderOutput forward_tokens(const TokenMatrix& image_tokens, const Encoder& enc, const InsertionSchedule& schedule,
                             const ForwardOptions& opts = {});

EncoderOutput forward(const Image& image, const Encoder& enc, const InsertionSchedule& schedule,
                      const ForwardOptions& opts = {});

struct BatchOutput {
    std::vector<EncoderOutput> outputs;    // padding stripped
    std::vector<Index> padded_lengths;     // rows per sequence entering each block
    Seconds merge_time{0};                 // merge steps plus re-padding
    Seconds block_time{0};
};

/// Pads every sequence to the batch maximum, runs the blocks on the stacked
/// batch with masked attention, and re-pads after each merge step.
BatchOutput forward_batch(std::span<const TokenMatrix> image_tokens, const Encoder& enc,
                          const InsertionSchedule& schedule, const ForwardOptions& opts = {});

struct PipelineResult {
    TokenMatrix decoder_input; // (E + N) x d
    EncoderOutput encoder;
    Seconds embed_time{0};
    Seconds reconstruct_time{0};
};

/// forward -> gather back to N image rows -> [special; image].
PipelineResult run_pipeline(const Image& image, const Encoder& enc, const InsertionSchedule& schedule,
                            const ForwardOptions& opts = {});

/// Expands an encoder output (possibly merged) to the full decoder input.
TokenMatrix expand_to_decoder_input(const EncoderOutput& out);

inline TokenMatrix forward_full_pipeline(const Image& image, const Encoder& enc, const InsertionSchedule& schedule,
                                         const ForwardOptions& opts = {}) {
    return run_pipeline(image, enc, schedule, opts).decoder_input;
}

} // namespace mpm

#endif
