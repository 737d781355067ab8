#include "mpm/types.hpp"

#include <numeric>

namespace mpm {

MergeMap MergeMap::identity(std::size_t n) {
    MergeMap map;
    map.entries.resize(n);
    std::iota(map.entries.begin(), map.entries.end(), std::uint32_t{0});
    map.n_clusters = static_cast<std::uint32_t>(n);
    return map;
}

namespace {

// Empty string means valid.
std::string find_violation(const MergeMap& map, std::size_t max_cluster_size) {
    if (map.entries.empty()) {
        return map.n_clusters == 0 ? "" : "empty map with nonzero cluster count";
    }
    if (map.n_clusters == 0 || map.n_clusters > map.entries.size()) {
        return "cluster count " + std::to_string(map.n_clusters) + " out of range for length " +
               std::to_string(map.entries.size());
    }
    std::vector<std::uint32_t> counts(map.n_clusters, 0);
    std::uint32_t next_fresh = 0;
    for (std::size_t i = 0; i < map.entries.size(); ++i) {
        const std::uint32_t id = map.entries[i];
        if (id >= map.n_clusters) {
            return "entry " + std::to_string(i) + " has id " + std::to_string(id) + " >= " +
                   std::to_string(map.n_clusters);
        }
        if (counts[id] == 0) {
            if (id != next_fresh) {
                return "first occurrence out of order at entry " + std::to_string(i) + ": id " +
                       std::to_string(id) + ", expected " + std::to_string(next_fresh);
            }
            ++next_fresh;
        }
        if (++counts[id] > max_cluster_size && max_cluster_size != 0) {
            return "cluster " + std::to_string(id) + " exceeds size " + std::to_string(max_cluster_size);
        }
    }
    if (next_fresh != map.n_clusters) {
        return "not surjective: " + std::to_string(map.n_clusters - next_fresh) + " unused ids";
    }
    return "";
}

} // namespace

void validate_merge_map(const MergeMap& map, std::size_t max_cluster_size) {
    if (auto why = find_violation(map, max_cluster_size); !why.empty()) {
        throw InvalidMapError("invalid merge map: " + why);
    }
}

bool is_valid_merge_map(const MergeMap& map, std::size_t max_cluster_size) {
    return find_violation(map, max_cluster_size).empty();
}

} // namespace mpm
