#ifndef MPM_FLOPS_HPP
#define MPM_FLOPS_HPP

#include <span>

#include "mpm/types.hpp"

namespace mpm {

/// Analytic FLOP model, evaluated on the sequence lengths a run actually saw.
///
///   attention  4 n d^2 + 2 n^2 d        per block
///   ffn        2 n d (m d) * 2          per block, m = ffn_mult
///   merge      2 n^2 d + 4 n d          per merge step (affinity + normalize/average)
struct FlopEstimate {
    double attention = 0.0;
    double ffn = 0.0;
    double merge = 0.0;

    double total() const { return attention + ffn + merge; }
    double gflops() const { return total() * 1e-9; }
};

inline double attention_flops(double n, double d) { return 4.0 * n * d * d + 2.0 * n * n * d; }
inline double ffn_flops(double n, double d, double ffn_mult) { return 2.0 * n * d * (ffn_mult * d) * 2.0; }
inline double merge_flops(double n, double d) { return 2.0 * n * n * d + 4.0 * n * d; }

inline FlopEstimate estimate_flops(std::span<const Index> block_lengths, std::span<const Index> merge_lengths, Index dim,
                                   int ffn_mult) {
    FlopEstimate f;
    const auto d = static_cast<double>(dim);
    for (const Index n : block_lengths) {
        f.attention += attention_flops(static_cast<double>(n), d);
        f.ffn += ffn_flops(static_cast<double>(n), d, ffn_mult);
    }
    for (const Index n : merge_lengths) {
        f.merge += merge_flops(static_cast<double>(n), d);
    }
    return f;
}

} // namespace mpm

#endif
