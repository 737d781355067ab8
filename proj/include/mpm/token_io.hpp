#ifndef MPM_TOKEN_IO_HPP
#define MPM_TOKEN_IO_HPP

#include <filesystem>

#include "mpm/types.hpp"

namespace mpm {

// Token file: "MPMT", u32 LE rows, u32 LE cols, rows*cols f32 LE row-major.
// Map file:   "MPMM", u32 LE N, u32 LE n_clusters, N u32 LE entries.

TokenMatrix read_token_file(const std::filesystem::path& path);
void write_token_file(const TokenMatrix& m, const std::filesystem::path& path);

/// One token per line, comma separated. The column count comes from the
/// first non-empty line; every later line must match it.
TokenMatrix read_token_csv(const std::filesystem::path& path);

/// Dispatches on extension: ".csv" goes through read_token_csv.
TokenMatrix read_tokens(const std::filesystem::path& path);

MergeMap read_map_file(const std::filesystem::path& path);
void write_map_file(const MergeMap& map, const std::filesystem::path& path);

} // namespace mpm

#endif
