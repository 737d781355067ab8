#ifndef MPM_RECONSTRUCTION_HPP
#define MPM_RECONSTRUCTION_HPP

#include <string>
#include <vector>

#include "mpm/types.hpp"

namespace mpm {

/// Map from the original token positions to the clusters after one or more
/// merge steps, together with the per-step maps it was folded from.
/// Clusters may hold up to 2^k tokens after k steps.
struct ComposedMap {
    MergeMap map;
    std::vector<MergeMap> stages;

    static ComposedMap identity(std::size_t n) { return {MergeMap::identity(n), {}}; }
    static ComposedMap from(MergeMap m) {
        ComposedMap c{m, {}};
        c.stages.push_back(std::move(m));
        return c;
    }

    std::size_t size() const { return map.size(); }
    std::uint32_t n_clusters() const { return map.n_clusters; }
};

/// result(i) = outer(inner(i)).
inline MergeMap compose_entries(const MergeMap& inner, const MergeMap& outer) {
    if (outer.size() != inner.n_clusters) {
        throw CompositionError("compose: outer map has " + std::to_string(outer.size()) + " entries but inner map has " +
                               std::to_string(inner.n_clusters) + " clusters");
    }
    MergeMap out;
    out.entries.resize(inner.size());
    for (std::size_t i = 0; i < inner.size(); ++i) {
        out.entries[i] = outer.entries[inner.entries[i]];
    }
    out.n_clusters = outer.n_clusters;
    return out;
}

inline ComposedMap compose(const ComposedMap& first, const ComposedMap& second) {
    ComposedMap out{compose_entries(first.map, second.map), first.stages};
    out.stages.insert(out.stages.end(), second.stages.begin(), second.stages.end());
    MPM_DEBUG_VALIDATE(out.map, 0);
    return out;
}

inline ComposedMap compose(const ComposedMap& first, const MergeMap& second) {
    return compose(first, ComposedMap::from(second));
}

inline ComposedMap compose(const MergeMap& first, const MergeMap& second) {
    return compose(ComposedMap::from(first), ComposedMap::from(second));
}

/// Left fold over the merge steps in the order they ran.
inline ComposedMap compose_all(std::size_t n, const std::vector<MergeMap>& steps) {
    ComposedMap acc = ComposedMap::identity(n);
    for (const auto& s : steps) {
        acc = compose(acc, s);
    }
    return acc;
}

/// Gather: row i of the result is a copy of row map(i) of the merged tokens.
template <typename Derived>
Tokens<typename Derived::Scalar> reconstruct(const Eigen::MatrixBase<Derived>& merged, const MergeMap& map) {
    using Scalar = typename Derived::Scalar;
    if (merged.rows() != static_cast<Index>(map.n_clusters)) {
        throw ReconstructionError("reconstruct: " + std::to_string(merged.rows()) + " merged rows for a map with " +
                                  std::to_string(map.n_clusters) + " clusters");
    }
    Tokens<Scalar> out(static_cast<Index>(map.size()), merged.cols());
    for (std::size_t i = 0; i < map.size(); ++i) {
        const auto k = map.entries[i];
        if (k >= map.n_clusters) {
            throw ReconstructionError("reconstruct: entry " + std::to_string(i) + " out of range");
        }
        out.row(static_cast<Index>(i)) = merged.row(k);
    }
    return out;
}

template <typename Derived>
Tokens<typename Derived::Scalar> reconstruct(const Eigen::MatrixBase<Derived>& merged, const ComposedMap& map) {
    return reconstruct(merged, map.map);
}

/// [special; image] stacked row-wise.
template <typename DerivedS, typename DerivedI>
Tokens<typename DerivedI::Scalar> assemble_decoder_input(const Eigen::MatrixBase<DerivedS>& special,
                                                         const Eigen::MatrixBase<DerivedI>& image) {
    using Scalar = typename DerivedI::Scalar;
    if (special.rows() > 0 && special.cols() != image.cols()) {
        throw ShapeError("assemble_decoder_input: special tokens have " + std::to_string(special.cols()) +
                         " columns, image tokens " + std::to_string(image.cols()));
    }
    Tokens<Scalar> out(special.rows() + image.rows(), image.cols());
    out.topRows(special.rows()) = special.template cast<Scalar>();
    out.bottomRows(image.rows()) = image;
    return out;
}

} // namespace mpm

#endif
