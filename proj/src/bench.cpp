#include "mpm/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mpm/flops.hpp"
#include "mpm/kernel.hpp"
#include "mpm/rng.hpp"
#include "mpm/token_io.hpp"

namespace mpm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return Seconds(Clock::now() - t0).count(); }

// Keeps results observable so the optimizer cannot drop timed work.
volatile float g_sink = 0.0f;

struct Input {
    Image image;          // used when tokens is empty
    TokenMatrix tokens;   // pre-embedded input
    bool embedded = false;
};

std::vector<Input> load_inputs(const BenchOptions& opts) {
    std::vector<Input> inputs;
    if (opts.token_dir.empty()) {
        if (opts.images < 1) {
            throw ConfigError("bench: --images must be at least 1");
        }
        for (int i = 0; i < opts.images; ++i) {
            Input in;
            in.image = make_redundant_image(opts.config.image_h, opts.config.image_w, opts.config.patch,
                                            opts.duplicate_fraction, mix_seed(opts.config.seed, 1000 + i));
            inputs.push_back(std::move(in));
        }
        return inputs;
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(opts.token_dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        Input in;
        in.tokens = read_tokens(f);
        in.embedded = true;
        if (in.tokens.cols() != opts.config.dim) {
            throw ShapeError(f.string() + ": token width " + std::to_string(in.tokens.cols()) +
                             " does not match --dim " + std::to_string(opts.config.dim));
        }
        inputs.push_back(std::move(in));
    }
    if (inputs.empty()) {
        throw IoError("bench: no token files in " + opts.token_dir.string());
    }
    return inputs;
}

struct StepTiming {
    double backbone = 0.0;
    double merge = 0.0;
    double reconstruct = 0.0;
};

struct StepResult {
    StepTiming timing;
    std::vector<Index> final_n;
    Index padded_n = 0;
    std::vector<double> gflops;
};

StepResult run_batch_step(std::span<const Input> batch, const Encoder& enc, const InsertionSchedule& schedule,
                          const ForwardOptions& fwd) {
    StepResult r;
    auto t0 = Clock::now();
    std::vector<TokenMatrix> tokens;
    tokens.reserve(batch.size());
    for (const auto& in : batch) {
        tokens.push_back(in.embedded ? in.tokens : patch_embed(in.image, enc));
    }
    const double embed = seconds_since(t0);

    auto out = forward_batch(tokens, enc, schedule, fwd);
    r.timing.backbone = embed + out.block_time.count();
    r.timing.merge = out.merge_time.count();

    t0 = Clock::now();
    float acc = 0.0f;
    for (const auto& o : out.outputs) {
        const TokenMatrix dec = expand_to_decoder_input(o);
        acc += dec(0, 0) + dec(dec.rows() - 1, dec.cols() - 1);
    }
    r.timing.reconstruct = seconds_since(t0);
    g_sink = g_sink + acc;

    const Index e = enc.special.rows();
    for (const auto& o : out.outputs) {
        const Index n = static_cast<Index>(o.composed_map.n_clusters());
        r.final_n.push_back(n);
        r.gflops.push_back(
            estimate_flops(o.per_block_lengths, o.merge_lengths, enc.config.dim, enc.config.ffn_mult).gflops());
    }
    r.padded_n = out.padded_lengths.empty() ? 0 : out.padded_lengths.back() - e;
    return r;
}

} // namespace

BenchReport run_bench(const BenchOptions& opts) {
    if (opts.batch < 1 || opts.warmup < 0 || opts.repeats < 1 || opts.threads < 1) {
        throw ConfigError("bench: batch, repeats and threads must be >= 1 and warmup >= 0");
    }
    opts.schedule.validate(opts.config.depth);
    const Encoder enc = init_encoder(opts.config);
    const std::vector<Input> inputs = load_inputs(opts);

    std::vector<std::span<const Input>> batches;
    for (std::size_t i = 0; i < inputs.size(); i += static_cast<std::size_t>(opts.batch)) {
        const std::size_t len = std::min(static_cast<std::size_t>(opts.batch), inputs.size() - i);
        batches.emplace_back(inputs.data() + i, len);
    }

    ForwardOptions fwd;
    fwd.threads = opts.threads;

    for (int w = 0; w < opts.warmup; ++w) {
        run_batch_step(batches[static_cast<std::size_t>(w) % batches.size()], enc, opts.schedule, fwd);
    }

    BenchReport report;
    report.batch = opts.batch;
    report.warmup = opts.warmup;
    report.repeats = opts.repeats;
    report.threads = std::min(opts.threads, opts.batch);
    report.schedule = opts.schedule.to_string();
    report.config = opts.config;

    double gflops_sum = 0.0;
    const auto t0 = Clock::now();
    for (int rep = 0; rep < opts.repeats; ++rep) {
        for (const auto& batch : batches) {
            const StepResult step = run_batch_step(batch, enc, opts.schedule, fwd);
            report.backbone_time_total += step.timing.backbone;
            report.merge_time_total += step.timing.merge;
            report.reconstruct_time_total += step.timing.reconstruct;
            report.images += batch.size();
            if (rep == 0) {
                report.per_image_final_N.insert(report.per_image_final_N.end(), step.final_n.begin(),
                                                step.final_n.end());
                report.padded_N_per_batch.push_back(step.padded_n);
                for (double g : step.gflops) {
                    gflops_sum += g;
                }
            }
        }
    }
    report.total_wall_time = seconds_since(t0);
    report.fps = report.total_wall_time > 0.0 ? static_cast<double>(report.images) / report.total_wall_time : 0.0;
    report.est_gflops_mean = gflops_sum / static_cast<double>(inputs.size());
    return report;
}

std::string to_json(const BenchReport& r) {
    const auto& c = r.config;
    nlohmann::json j = {
        {"schema", BenchReport::kSchema},
        {"images", r.images},
        {"batch", r.batch},
        {"warmup", r.warmup},
        {"repeats", r.repeats},
        {"threads", r.threads},
        {"schedule", r.schedule},
        {"total_wall_time", r.total_wall_time},
        {"fps", r.fps},
        {"merge_time_total", r.merge_time_total},
        {"backbone_time_total", r.backbone_time_total},
        {"reconstruct_time_total", r.reconstruct_time_total},
        {"per_image_final_N", r.per_image_final_N},
        {"padded_N_per_batch", r.padded_N_per_batch},
        {"est_gflops_mean", r.est_gflops_mean},
        {"config",
         {{"image_h", c.image_h},
          {"image_w", c.image_w},
          {"patch", c.patch},
          {"depth", c.depth},
          {"dim", c.dim},
          {"heads", c.heads},
          {"ffn_mult", c.ffn_mult},
          {"n_special", c.n_special},
          {"n_tokens", c.n_tokens()},
          {"seed", c.seed}}},
    };
    return j.dump(2);
}

std::string to_text(const BenchReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "schedule            " << (r.schedule.empty() ? "(none)" : r.schedule) << '\n'
       << "images              " << r.images << " (batch " << r.batch << ", warmup " << r.warmup << ", repeats "
       << r.repeats << ", threads " << r.threads << ")\n"
       << "total wall time     " << r.total_wall_time << " s\n"
       << "fps                 " << r.fps << '\n'
       << "backbone time       " << r.backbone_time_total << " s\n"
       << "merge time          " << r.merge_time_total << " s\n"
       << "reconstruct time    " << r.reconstruct_time_total << " s\n"
       << "est GFLOPs / image  " << r.est_gflops_mean << '\n';
    os << "final N per image  ";
    for (auto n : r.per_image_final_N) {
        os << ' ' << n;
    }
    os << "\npadded N per batch ";
    for (auto n : r.padded_N_per_batch) {
        os << ' ' << n;
    }
    os << '\n';
    return os.str();
}

double first_merge_fraction(const Image& image, const Encoder& enc, const InsertionSchedule& schedule) {
    if (schedule.empty()) {
        throw ConfigError("adaptivity: schedule must contain at least one merge step");
    }
    schedule.validate(enc.config.depth);
    const Index e = enc.special.rows();
    const TokenMatrix tokens = patch_embed(image, enc);
    TokenMatrix x = assemble_decoder_input(enc.special, tokens);
    for (int l = 0; l < schedule.blocks.front(); ++l) {
        x = transformer_block(x, enc.blocks[static_cast<std::size_t>(l)], enc.config.heads);
    }
    const auto step = mpm_step(x.bottomRows(x.rows() - e));
    return merged_fraction(step.map);
}

AdaptivityReport run_adaptivity(const Image& image, EncoderConfig config, const InsertionSchedule& schedule,
                                const NightParams& night) {
    config.image_h = image.height;
    config.image_w = image.width;
    config.channels = image.channels;
    const Encoder enc = init_encoder(config);
    AdaptivityReport r;
    r.n_tokens = config.n_tokens();
    r.clean_fraction = first_merge_fraction(image, enc, schedule);
    r.degraded_fraction = first_merge_fraction(degrade_to_night(image, night), enc, schedule);
    r.delta = r.clean_fraction - r.degraded_fraction;
    return r;
}

std::string to_json(const AdaptivityReport& r) {
    nlohmann::json j = {{"schema", 1},
                        {"n_tokens", r.n_tokens},
                        {"clean_merged_fraction", r.clean_fraction},
                        {"degraded_merged_fraction", r.degraded_fraction},
                        {"delta", r.delta}};
    return j.dump(2);
}

MergeSummary cmd_merge(const std::filesystem::path& input, const std::filesystem::path& output,
                       const std::filesystem::path& map_out, bool json, std::ostream& out) {
    const TokenMatrix x = read_tokens(input);
    const auto step = mpm_step(x);
    write_token_file(step.merged, output);
    write_map_file(step.map, map_out);
    MergeSummary s{x.rows(), static_cast<Index>(step.map.n_clusters), merged_fraction(step.map)};
    if (json) {
        out << nlohmann::json{{"schema", 1}, {"N", s.n}, {"N_merged", s.n_merged}, {"merged_fraction", s.fraction}}
                   .dump(2)
            << '\n';
    } else {
        out << "N " << s.n << "\nN' " << s.n_merged << "\nmerged fraction " << s.fraction << '\n';
    }
    return s;
}

int cmd_bench(const BenchOptions& opts, bool json, std::ostream& out) {
    const BenchReport report = run_bench(opts);
    out << (json ? to_json(report) + "\n" : to_text(report));
    return 0;
}

void cmd_visualize(const std::filesystem::path& image, const std::filesystem::path& map_file,
                   const std::filesystem::path& output, int patch, double alpha) {
    const Image img = read_ppm(image);
    const MergeMap map = read_map_file(map_file);
    write_ppm(tint_patches(img, patch, map, alpha), output);
}

AdaptivityReport cmd_adaptivity(const std::filesystem::path& image, const EncoderConfig& config,
                                const InsertionSchedule& schedule, const NightParams& night, bool json,
                                std::ostream& out) {
    const auto r = run_adaptivity(read_ppm(image), config, schedule, night);
    if (json) {
        out << to_json(r) << '\n';
    } else {
        out << "tokens " << r.n_tokens << "\nclean merged fraction " << r.clean_fraction
            << "\ndegraded merged fraction " << r.degraded_fraction << "\ndelta " << r.delta << '\n';
    }
    return r;
}

} // namespace mpm
