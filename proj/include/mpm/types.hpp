#ifndef MPM_TYPES_HPP
#define MPM_TYPES_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mpm {

/// Dense row-major token sequence. Row i is patch i in raster order.
template <typename Scalar>
using Tokens = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Pairwise similarity matrix with a masked diagonal.
template <typename Scalar>
using Affinity = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using TokenMatrix = Tokens<float>;
using Index = Eigen::Index;

// Errors. Everything derives from mpm::Error so callers can catch broadly.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : Error { using Error::Error; };
struct TruncationError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct DegenerateTokenError : Error { using Error::Error; };
struct InvalidPairingError : Error { using Error::Error; };
struct InvalidMapError : Error { using Error::Error; };
struct CompositionError : Error { using Error::Error; };
struct ReconstructionError : Error { using Error::Error; };
struct ShapeError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

/// Cluster assignment for every token of a sequence.
///
/// entries[i] is the compact cluster ID of token i. A map produced by a
/// single merge step has clusters of size one or two and its IDs first
/// appear in increasing order when scanned left to right.
struct MergeMap {
    std::vector<std::uint32_t> entries;
    std::uint32_t n_clusters = 0;

    MergeMap() = default;
    MergeMap(std::vector<std::uint32_t> e, std::uint32_t clusters)
        : entries(std::move(e)), n_clusters(clusters) {}

    static MergeMap identity(std::size_t n);

    std::size_t size() const { return entries.size(); }
    std::uint32_t operator[](std::size_t i) const { return entries[i]; }

    friend bool operator==(const MergeMap&, const MergeMap&) = default;
};

/// Checks surjectivity, ordered first occurrences and cluster sizes in one
/// pass. Throws InvalidMapError describing the first violation found.
/// max_cluster_size = 0 disables the size check.
void validate_merge_map(const MergeMap& map, std::size_t max_cluster_size = 2);

/// Non-throwing variant of validate_merge_map.
bool is_valid_merge_map(const MergeMap& map, std::size_t max_cluster_size = 2);

/// Tokens that ride along in front of the image tokens and are never merged.
struct SpecialTokens {
    TokenMatrix data;

    Index count() const { return data.rows(); }
};

/// Throws DataError if any entry is NaN or infinite.
template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
    if (!m.allFinite()) {
        throw DataError(std::string(what) + ": non-finite value");
    }
}

} // namespace mpm

#ifndef NDEBUG
#define MPM_DEBUG_VALIDATE(map, max_size) ::mpm::validate_merge_map((map), (max_size))
#else
#define MPM_DEBUG_VALIDATE(map, max_size) ((void)0)
#endif

#endif
