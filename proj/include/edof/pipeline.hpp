#pragma once

#include <functional>
#include <optional>
#include <string>

#include "edof/acquisition.hpp"
#include "edof/image.hpp"
#include "edof/neural.hpp"
#include "edof/wavelet.hpp"

namespace edof {

/// Runs fn(0..n-1) on a fixed pool of `workers` threads. Tasks share only
/// immutable inputs and write disjoint slots, so results do not depend on
/// the worker count.
void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn);

enum class FuseMethod { wavelet, cnn_max, cnn_3d };

const char* fuse_method_name(FuseMethod m);

struct Scenario {
    enum class Kind { none, zstep, bin, lowmag };
    Kind kind = Kind::none;
    int stride = 3;          // zstep
    int factor = 4;          // bin
    double na = 0.6;         // lowmag
    double wavelength = 0.55;
    double scale = 2.5;

    std::string label() const;
};

ZStack apply_scenario(const ZStack& stack, const Scenario& scenario);

struct BatchJob {
    std::vector<std::filesystem::path> manifests;
    FuseMethod method = FuseMethod::wavelet;
    Scenario scenario;
    int workers = 1;
    std::filesystem::path out_dir;
    int levels = 12;
    std::string wavelet = "sym8"; // or "haar"
    std::filesystem::path weights; // required for cnn methods
    int bit_depth = 16;
};

struct StackResult {
    std::string stack_id;
    bool ok = false;
    std::string error_code; // short error name when !ok (CSV status column)
    std::string error;      // full error message
    int planes = 0;         // plane count fed to the fusion
    double seconds = 0.0;
};

struct BatchSummary {
    std::vector<StackResult> results; // sorted by stack_id
    int failures = 0;
};

/// Fuses every manifest (stack-level parallelism), writing
/// `<stack_id>_fused.pgm` per stack plus a `fuse_summary.csv`. A failed
/// stack is recorded and the batch continues.
BatchSummary run_fuse_batch(const BatchJob& job);

struct TimingReport {
    std::string method;
    int planes = 0;
    int stacks = 0;
    int workers = 0;
    double seconds_sequential = 0.0;
    double seconds_parallel = 0.0;
    double speedup = 0.0;
    std::vector<uint64_t> output_hashes; // per stack, worker-count independent
};

/// Times the fuse compute of preloaded stacks, once with one worker and
/// once with job.workers; file I/O stays outside the timed region.
TimingReport run_bench(const BatchJob& job, const std::vector<ZStack>& stacks);

/// Convenience wrapper that loads the job's manifests first.
TimingReport run_bench(const BatchJob& job);

struct EvalRow {
    std::string stack_id;
    double ssim_value = 0.0;
    std::optional<double> dice_value; // empty on degenerate Otsu
};

struct EvalReport {
    std::vector<EvalRow> rows; // sorted by stack_id
    double ssim_mean = 0.0, ssim_std = 0.0;
    double dice_mean = 0.0, dice_std = 0.0;
    std::string summary_ssim; // "0.77 ± 0.03" style
    std::string summary_dice;
};

/// Compares same-named PGM files of two directories: SSIM plus the Dice
/// overlap of their parasite segmentations. Writes CSV columns
/// stack_id,method,scenario,ssim,dice with a trailing summary row.
EvalReport run_eval(const std::filesystem::path& reference_dir,
                    const std::filesystem::path& test_dir, double pixel_pitch,
                    const std::string& method_label, const std::string& scenario_label,
                    const std::filesystem::path& out_csv);

struct TrainJob {
    std::filesystem::path data_dir; // *.manifest stacks
    ArchConfig arch;
    TrainConfig tcfg;
    Scenario scenario;
    int levels = 12;               // wavelet target depth
    std::string wavelet = "sym8";
    std::filesystem::path out_weights;
    std::filesystem::path loss_csv;
};

/// Builds (degraded + pre-upsampled stack, wavelet EDoF target) pairs from
/// every manifest in the data dir, trains, and writes weights + loss log.
TrainResult run_train(const TrainJob& job);

FilterBank make_bank(const std::string& name);

/// "0.77 ± 0.03" style, two decimals.
std::string format_mean_std(double mean, double sd);

} // namespace edof
