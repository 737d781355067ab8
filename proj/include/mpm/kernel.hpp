#ifndef MPM_KERNEL_HPP
#define MPM_KERNEL_HPP

// Mutual pair merging: one merge step over a set of image tokens.
//
//   normalize rows -> cosine affinity (diagonal masked) -> nearest neighbor
//   per row -> keep reciprocal pairs -> compact ids by left-to-right scan ->
//   average each cluster in the original token space.
//
// Every function is a pure template over the Eigen scalar type. mpm_step
// takes float tokens and accumulates similarities in `Accum` (double by
// default) so the argmax is stable against summation-order round-off.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mpm/types.hpp"

namespace mpm {

/// b(i) for every row: the most similar other token.
struct NearestNeighbors {
    std::vector<std::uint32_t> entries;

    std::size_t size() const { return entries.size(); }
    std::uint32_t operator[](std::size_t i) const { return entries[i]; }
    friend bool operator==(const NearestNeighbors&, const NearestNeighbors&) = default;
};

struct Pair {
    std::uint32_t lo;
    std::uint32_t hi;
    friend bool operator==(const Pair&, const Pair&) = default;
    friend auto operator<=>(const Pair&, const Pair&) = default;
};

/// Reciprocal nearest-neighbor pairs, lo < hi, sorted by lo.
using PairSet = std::vector<Pair>;

template <typename Scalar>
struct MpmResult {
    Tokens<Scalar> merged;
    MergeMap map;
};

/// Value written on the affinity diagonal. Stands in for -inf: every legal
/// cosine is >= -1 so it never wins an argmax, and it keeps arithmetic finite.
template <typename Scalar>
constexpr Scalar masked_value() {
    return std::numeric_limits<Scalar>::lowest();
}

/// Two similarities closer than this are a tie and the lower column wins.
/// Sized well above the round-off of an O(d) dot product and far below any
/// real gap between distinct cosines.
template <typename Scalar>
constexpr Scalar tie_tolerance() {
    if constexpr (std::is_same_v<Scalar, float>) {
        return Scalar(4) * std::numeric_limits<float>::epsilon();
    } else {
        return Scalar(1e-12);
    }
}

/// Rows with an L2 norm below this cannot be normalized.
inline constexpr double kMinTokenNorm = 1e-12;

template <typename Derived>
Tokens<typename Derived::Scalar> row_normalize(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    Tokens<Scalar> out = x;
    for (Index i = 0; i < out.rows(); ++i) {
        const Scalar norm = out.row(i).norm();
        if (!(static_cast<double>(norm) >= kMinTokenNorm)) {
            throw DegenerateTokenError("token " + std::to_string(i) + " has zero norm; cosine similarity undefined");
        }
        out.row(i) /= norm;
    }
    return out;
}

/// S = X X^T with the diagonal masked. Rows must already be unit length.
template <typename Derived>
Affinity<typename Derived::Scalar> cosine_affinity(const Eigen::MatrixBase<Derived>& x_norm) {
    using Scalar = typename Derived::Scalar;
    Affinity<Scalar> s(x_norm.rows(), x_norm.rows());
    s.noalias() = x_norm * x_norm.transpose();
    s.diagonal().setConstant(masked_value<Scalar>());
    return s;
}

/// Row-wise argmax excluding the diagonal. Ties (within tie_tolerance) go to
/// the lowest column. A single-row matrix has no candidates and maps to
/// itself; callers handle that case before pairing.
template <typename Derived>
NearestNeighbors nearest_neighbors(const Eigen::MatrixBase<Derived>& s) {
    using Scalar = typename Derived::Scalar;
    const Index n = s.rows();
    NearestNeighbors b;
    b.entries.resize(static_cast<std::size_t>(n));
    if (n == 1) {
        b.entries[0] = 0;
        return b;
    }
    for (Index i = 0; i < n; ++i) {
        const auto row = s.row(i);
        const Scalar threshold = row.maxCoeff() - tie_tolerance<Scalar>();
        Index best = (i == 0) ? 1 : 0;
        for (Index j = 0; j < n; ++j) {
            if (j != i && row(j) >= threshold) {
                best = j;
                break;
            }
        }
        b.entries[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
    }
    return b;
}

inline PairSet mutual_pairs(const NearestNeighbors& b) {
    PairSet pairs;
    const auto n = b.size();
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t j = b[i];
        if (j > i && j < n && b[j] == i) {
            pairs.push_back({static_cast<std::uint32_t>(i), j});
        }
    }
    return pairs;
}

/// Left-to-right scan: singletons and pair representatives (the lower index)
/// take the next fresh id, the higher index of a pair inherits its partner's.
inline MergeMap assign_compact_ids(std::size_t n, const PairSet& pairs) {
    constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> partner(n, kNone);
    for (const auto& p : pairs) {
        if (p.lo >= p.hi || p.hi >= n) {
            throw InvalidPairingError("pair (" + std::to_string(p.lo) + ", " + std::to_string(p.hi) +
                                      ") is not an ordered pair of indices below " + std::to_string(n));
        }
        if (partner[p.lo] != kNone || partner[p.hi] != kNone) {
            throw InvalidPairingError("pairs overlap at (" + std::to_string(p.lo) + ", " + std::to_string(p.hi) + ")");
        }
        partner[p.lo] = p.hi;
        partner[p.hi] = p.lo;
    }

    MergeMap map;
    map.entries.resize(n);
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t other = partner[i];
        if (other != kNone && other < i) {
            map.entries[i] = map.entries[other];
        } else {
            map.entries[i] = next++;
        }
    }
    map.n_clusters = next;
    MPM_DEBUG_VALIDATE(map, 2);
    return map;
}

/// Cluster means in the original token space.
template <typename Derived>
Tokens<typename Derived::Scalar> merge_tokens(const Eigen::MatrixBase<Derived>& x, const MergeMap& map) {
    using Scalar = typename Derived::Scalar;
    if (static_cast<Index>(map.size()) != x.rows()) {
        throw ShapeError("merge_tokens: map has " + std::to_string(map.size()) + " entries for " +
                         std::to_string(x.rows()) + " tokens");
    }
    Tokens<Scalar> out = Tokens<Scalar>::Zero(map.n_clusters, x.cols());
    std::vector<std::uint32_t> counts(map.n_clusters, 0);
    for (Index i = 0; i < x.rows(); ++i) {
        const auto k = map[static_cast<std::size_t>(i)];
        if (counts[k]++ == 0) {
            out.row(k) = x.row(i);
        } else {
            out.row(k) += x.row(i);
        }
    }
    for (Index k = 0; k < out.rows(); ++k) {
        if (counts[static_cast<std::size_t>(k)] > 1) {
            out.row(k) /= static_cast<Scalar>(counts[static_cast<std::size_t>(k)]);
        }
    }
    return out;
}

/// One full merge step. N == 1 passes through with map [0]; N == 0 throws.
template <typename Accum = double, typename Derived>
MpmResult<typename Derived::Scalar> mpm_step(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    if (x.rows() == 0 || x.cols() == 0) {
        throw ShapeError("mpm_step: empty token matrix");
    }
    if (x.rows() == 1) {
        return {Tokens<Scalar>(x), MergeMap::identity(1)};
    }
    const Tokens<Accum> unit = row_normalize(x.template cast<Accum>());
    const Affinity<Accum> s = cosine_affinity(unit);
    const PairSet pairs = mutual_pairs(nearest_neighbors(s));
    MergeMap map = assign_compact_ids(static_cast<std::size_t>(x.rows()), pairs);
    Tokens<Scalar> merged = merge_tokens(x, map);
    return {std::move(merged), std::move(map)};
}

/// Fraction of tokens removed by a map: (N - N') / N.
inline double merged_fraction(const MergeMap& map) {
    if (map.size() == 0) {
        return 0.0;
    }
    return static_cast<double>(map.size() - map.n_clusters) / static_cast<double>(map.size());
}

} // namespace mpm

#endif
