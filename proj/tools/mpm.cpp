// mpm: command-line front end for mutual pair merging.
//
//   mpm merge      <in.mpmt|in.csv> <out.mpmt> <out.mpmm>
//   mpm bench      [--schedule 2,5] [--batch B] [--warmup W] [--repeats R] ...
//   mpm visualize  <image.ppm> <map.mpmm> <out.ppm>
//   mpm adaptivity <image.ppm> [--luminosity s] [--sigma s] [--poisson k]
//
// MPM_SEED in the environment overrides --seed.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mpm/bench.hpp"

namespace {

struct CommonFlags {
    int depth = 12;
    int dim = 192;
    int heads = 3;
    int patch = 16;
    std::string image_size = "512";
    std::string schedule = "2,5";
    std::uint64_t seed = 0;
    int threads = 1;
    std::string format = "json";
};

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--depth", f.depth, "Number of transformer blocks")->capture_default_str();
    cmd->add_option("--dim", f.dim, "Token width d")->capture_default_str();
    cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
    cmd->add_option("--patch", f.patch, "Patch size in pixels")->capture_default_str();
    cmd->add_option("--schedule", f.schedule, "Comma-separated 0-based blocks to merge before")->capture_default_str();
    cmd->add_option("--seed", f.seed, "Seed for weights and synthetic inputs")->capture_default_str();
    cmd->add_option("--threads", f.threads, "Worker threads across images of a batch")->capture_default_str();
}

void add_format_flag(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--format", f.format, "Output format")->check(CLI::IsMember({"json", "text"}))->capture_default_str();
}

std::pair<int, int> parse_image_size(const std::string& s) {
    const auto x = s.find('x');
    if (x == std::string::npos) {
        const int v = std::stoi(s);
        return {v, v};
    }
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

mpm::EncoderConfig make_config(const CommonFlags& f) {
    mpm::EncoderConfig cfg;
    std::tie(cfg.image_h, cfg.image_w) = parse_image_size(f.image_size);
    cfg.patch = f.patch;
    cfg.depth = f.depth;
    cfg.dim = f.dim;
    cfg.heads = f.heads;
    cfg.seed = f.seed;
    if (const char* env = std::getenv("MPM_SEED"); env != nullptr && *env != '\0') {
        cfg.seed = std::stoull(env);
    }
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mutual pair merging: token merge, benchmark and visualization tools"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string in_path, out_path, map_path, image_path;

    auto* merge = app.add_subcommand("merge", "Merge one token file and write merged tokens and the merge map");
    merge->add_option("input", in_path, "Token file (MPMT) or CSV")->required();
    merge->add_option("output", out_path, "Merged token file")->required();
    merge->add_option("map", map_path, "Merge map file (MPMM)")->required();
    add_format_flag(merge, flags);

    mpm::BenchOptions bench_opts;
    std::string input_source = "synthetic";
    auto* bench = app.add_subcommand("bench", "Time the toy encoder with and without merging");
    add_model_flags(bench, flags);
    add_format_flag(bench, flags);
    bench->add_option("--image-size", flags.image_size, "Image size, N or HxW pixels")->capture_default_str();
    bench->add_option("--batch", bench_opts.batch, "Images per padded batch")->capture_default_str();
    bench->add_option("--warmup", bench_opts.warmup, "Untimed warmup batch steps")->capture_default_str();
    bench->add_option("--repeats", bench_opts.repeats, "Timed passes over the input set")->capture_default_str();
    bench->add_option("--images", bench_opts.images, "Synthetic input count")->capture_default_str();
    bench->add_option("--duplicates", bench_opts.duplicate_fraction, "Fraction of duplicate patches in synthetic inputs")
        ->capture_default_str();
    bench->add_option("--input", input_source, "'synthetic' or a directory of token files")->capture_default_str();

    std::string viz_out;
    int viz_patch = 16;
    double alpha = 0.6;
    auto* viz = app.add_subcommand("visualize", "Tint image patches by merge cluster");
    viz->add_option("image", image_path, "Input PPM image")->required();
    viz->add_option("map", map_path, "Merge map file (MPMM)")->required();
    viz->add_option("output", viz_out, "Output PPM")->required();
    viz->add_option("--patch", viz_patch, "Patch size in pixels")->capture_default_str();
    viz->add_option("--alpha", alpha, "Tint weight in [0, 1]")->check(CLI::Range(0.0, 1.0))->capture_default_str();

    mpm::NightParams night;
    auto* adapt = app.add_subcommand("adaptivity", "Compare merge rates on a clean and a low-light copy of an image");
    adapt->add_option("image", image_path, "Input PPM image")->required();
    add_model_flags(adapt, flags);
    add_format_flag(adapt, flags);
    adapt->add_option("--luminosity", night.luminosity, "Luminosity scale")->capture_default_str();
    adapt->add_option("--sigma", night.sigma, "Gaussian thermal noise sigma")->capture_default_str();
    adapt->add_option("--poisson", night.photons_per_unit, "Shot noise photons at full intensity (0 disables)")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        const bool json = flags.format == "json";
        if (merge->parsed()) {
            mpm::cmd_merge(in_path, out_path, map_path, json, std::cout);
        } else if (bench->parsed()) {
            bench_opts.config = make_config(flags);
            bench_opts.schedule = mpm::InsertionSchedule::parse(flags.schedule);
            bench_opts.threads = flags.threads;
            if (input_source != "synthetic") {
                bench_opts.token_dir = input_source;
            }
            return mpm::cmd_bench(bench_opts, json, std::cout);
        } else if (viz->parsed()) {
            mpm::cmd_visualize(image_path, map_path, viz_out, viz_patch, alpha);
        } else if (adapt->parsed()) {
            const auto cfg = make_config(flags);
            night.seed = cfg.seed;
            mpm::cmd_adaptivity(image_path, cfg, mpm::InsertionSchedule::parse(flags.schedule), night, json, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "mpm: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
