#ifndef MPM_BENCH_HPP
#define MPM_BENCH_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mpm/encoder.hpp"
#include "mpm/image.hpp"

namespace mpm {

struct BenchOptions {
    EncoderConfig config;
    InsertionSchedule schedule = InsertionSchedule::standard();
    int batch = 1;
    int warmup = 20;
    int repeats = 1;
    int threads = 1;
    /// Empty: synthetic images. Otherwise a directory of token files
    /// (already embedded, E excluded), processed in sorted filename order.
    std::filesystem::path token_dir;
    int images = 8;
    double duplicate_fraction = 0.5;
};

/// Timings are wall-clock seconds over the timed repeats only.
struct BenchReport {
    static constexpr int kSchema = 1;

    std::size_t images = 0; // images processed in the timed section
    int batch = 1;
    int warmup = 0;
    int repeats = 1;
    int threads = 1;
    std::string schedule;
    double total_wall_time = 0.0;
    double fps = 0.0;
    double merge_time_total = 0.0;
    double backbone_time_total = 0.0; // patch embedding and transformer blocks
    double reconstruct_time_total = 0.0;
    std::vector<Index> per_image_final_N;  // one per distinct input
    std::vector<Index> padded_N_per_batch; // image rows after padding, one per batch
    double est_gflops_mean = 0.0;
    EncoderConfig config;
};

BenchReport run_bench(const BenchOptions& opts);

std::string to_json(const BenchReport& report);
std::string to_text(const BenchReport& report);

/// Runs the blocks before the first scheduled merge and returns the merged
/// fraction (N - N') / N of that first merge step.
double first_merge_fraction(const Image& image, const Encoder& enc, const InsertionSchedule& schedule);

struct AdaptivityReport {
    Index n_tokens = 0;
    double clean_fraction = 0.0;
    double degraded_fraction = 0.0;
    double delta = 0.0; // clean - degraded
};

AdaptivityReport run_adaptivity(const Image& image, EncoderConfig config, const InsertionSchedule& schedule,
                                const NightParams& night);

std::string to_json(const AdaptivityReport& report);

// Command entry points used by the CLI. They print to `out` and return a
// process exit status; errors propagate as exceptions.

struct MergeSummary {
    Index n = 0;
    Index n_merged = 0;
    double fraction = 0.0;
};

MergeSummary cmd_merge(const std::filesystem::path& input, const std::filesystem::path& output,
                       const std::filesystem::path& map_out, bool json, std::ostream& out);

int cmd_bench(const BenchOptions& opts, bool json, std::ostream& out);

/// Tints each patch of the image by its cluster color and writes a PPM.
void cmd_visualize(const std::filesystem::path& image, const std::filesystem::path& map_file,
                   const std::filesystem::path& output, int patch, double alpha);

AdaptivityReport cmd_adaptivity(const std::filesystem::path& image, const EncoderConfig& config,
                                const InsertionSchedule& schedule, const NightParams& night, bool json,
                                std::ostream& out);

} // namespace mpm

#endif
