#include "edof/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "edof/metrics.hpp"

namespace edof {

void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn) {
    if (workers < 1)
        fail(Errc::invalid_argument, "workers must be >= 1");
    const int pool = static_cast<int>(std::min<size_t>(static_cast<size_t>(workers), n));
    if (pool <= 1) {
        for (size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(pool));
    for (int t = 0; t < pool; ++t)
        threads.emplace_back([&] {
            for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                fn(i);
        });
    for (auto& th : threads)
        th.join();
}

const char* fuse_method_name(FuseMethod m) {
    switch (m) {
    case FuseMethod::wavelet: return "wavelet";
    case FuseMethod::cnn_max: return "cnn-max";
    case FuseMethod::cnn_3d: return "cnn-3d";
    }
    return "?";
}

std::string Scenario::label() const {
    char buf[64];
    switch (kind) {
    case Kind::none: return "none";
    case Kind::zstep:
        std::snprintf(buf, sizeof buf, "zstep(%d)", stride);
        return buf;
    case Kind::bin:
        std::snprintf(buf, sizeof buf, "bin(%d)", factor);
        return buf;
    case Kind::lowmag:
        std::snprintf(buf, sizeof buf, "lowmag(%.2gna/%.2gx)", na, scale);
        return buf;
    }
    return "?";
}

ZStack apply_scenario(const ZStack& stack, const Scenario& scenario) {
    switch (scenario.kind) {
    case Scenario::Kind::none:
        return stack;
    case Scenario::Kind::zstep:
        return subsample_zstep(stack, scenario.stride);
    case Scenario::Kind::bin:
        return bin_stack(stack, scenario.factor);
    case Scenario::Kind::lowmag: {
        PsfParams p;
        p.numerical_aperture = scenario.na;
        p.wavelength = scenario.wavelength;
        p.voxel_dz = stack.z_step;
        p.voxel_dy = stack.planes.front().pixel_pitch;
        p.voxel_dx = stack.planes.front().pixel_pitch;
        return simulate_low_mag(stack, p, scenario.scale);
    }
    }
    return stack;
}

FilterBank make_bank(const std::string& name) {
    if (name == "sym8")
        return FilterBank::sym8();
    if (name == "haar")
        return FilterBank::haar();
    fail(Errc::invalid_argument, "unknown wavelet '" + name + "', expected sym8 or haar");
}

namespace {

int round_up4(int v) { return (v + 3) / 4 * 4; }

struct Fuser {
    FuseMethod method;
    FilterBank bank;
    int levels;
    NetworkParams params;
    ArchConfig arch;

    // target dims for the cnn pre-upsampling step; 0 = derive per stack
    int target_h = 0;
    int target_w = 0;

    Image fuse(const ZStack& degraded) const {
        if (method == FuseMethod::wavelet)
            return fuse_wavelet(degraded, bank, levels);
        const int th = target_h > 0 ? target_h : round_up4(degraded.planes.front().height);
        const int tw = target_w > 0 ? target_w : round_up4(degraded.planes.front().width);
        const ZStack up = pre_upsample(degraded, th, tw);
        return forward(params, arch, up);
    }
};

Fuser make_fuser(const BatchJob& job) {
    Fuser f{job.method, make_bank(job.wavelet), job.levels, {}, {}, 0, 0};
    if (job.method != FuseMethod::wavelet) {
        if (job.weights.empty())
            fail(Errc::invalid_argument, "cnn methods need --weights");
        auto [params, arch] = load_weights(job.weights);
        if (job.method == FuseMethod::cnn_max && arch.variant != Variant::max_fusion)
            fail(Errc::shape_mismatch, "weights file holds a volumetric model");
        if (job.method == FuseMethod::cnn_3d && arch.variant != Variant::volumetric)
            fail(Errc::shape_mismatch, "weights file holds a max-fusion model");
        f.params = std::move(params);
        f.arch = arch;
    }
    return f;
}

uint64_t fnv1a(const std::vector<double>& v) {
    uint64_t h = 1469598103934665603ull;
    const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
    for (size_t i = 0; i < v.size() * sizeof(double); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    sd = 0.0;
    if (v.empty())
        return;
    for (double x : v)
        mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double acc = 0.0;
        for (double x : v)
            acc += (x - mean) * (x - mean);
        sd = std::sqrt(acc / static_cast<double>(v.size() - 1));
    }
}

} // namespace

std::string format_mean_std(double mean, double sd) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, sd);
    return buf;
}

BatchSummary run_fuse_batch(const BatchJob& job) {
    if (job.manifests.empty())
        fail(Errc::invalid_argument, "no stack manifests given");
    if (job.out_dir.empty())
        fail(Errc::invalid_argument, "no output directory given");
    std::filesystem::create_directories(job.out_dir);
    const Fuser fuser = make_fuser(job);

    BatchSummary summary;
    summary.results.resize(job.manifests.size());
    std::vector<Image> fused(job.manifests.size());

    parallel_for(job.manifests.size(), job.workers, [&](size_t i) {
        StackResult& r = summary.results[i];
        r.stack_id = job.manifests[i].stem().string();
        try {
            const ZStack stack = load_stack(read_manifest(job.manifests[i]));
            const ZStack degraded = apply_scenario(stack, job.scenario);
            r.planes = static_cast<int>(degraded.planes.size());
            const auto t0 = std::chrono::steady_clock::now();
            fused[i] = fuser.fuse(degraded);
            const auto t1 = std::chrono::steady_clock::now();
            r.seconds = std::chrono::duration<double>(t1 - t0).count();
            r.ok = true;
        } catch (const Error& e) {
            r.error_code = errc_name(e.code());
            r.error = e.what();
        }
    });

    // single writer keeps file output and CSV ordering deterministic
    std::vector<size_t> order(summary.results.size());
    for (size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return summary.results[a].stack_id < summary.results[b].stack_id;
    });

    std::ofstream csv(job.out_dir / "fuse_summary.csv");
    if (!csv)
        fail(Errc::unwritable_path, (job.out_dir / "fuse_summary.csv").string());
    csv << "stack_id,method,scenario,planes,seconds,status\n";
    for (size_t i : order) {
        const StackResult& r = summary.results[i];
        if (r.ok)
            save_pgm(fused[i], job.bit_depth, job.out_dir / (r.stack_id + "_fused.pgm"));
        else
            ++summary.failures;
        char sec[32];
        std::snprintf(sec, sizeof sec, "%.6f", r.seconds);
        csv << r.stack_id << ',' << fuse_method_name(job.method) << ',' << job.scenario.label()
            << ',' << r.planes << ',' << sec << ',' << (r.ok ? "ok" : r.error_code) << "\n";
    }

    std::vector<StackResult> sorted;
    sorted.reserve(summary.results.size());
    for (size_t i : order)
        sorted.push_back(summary.results[i]);
    summary.results = std::move(sorted);
    return summary;
}

TimingReport run_bench(const BatchJob& job, const std::vector<ZStack>& stacks) {
    if (stacks.size() < 8)
        fail(Errc::invalid_argument, "bench needs at least 8 stacks");
    const Fuser fuser = make_fuser(job);

    std::vector<ZStack> degraded(stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i)
        degraded[i] = apply_scenario(stacks[i], job.scenario);

    TimingReport report;
    report.method = fuse_method_name(job.method);
    report.planes = static_cast<int>(degraded.front().planes.size());
    report.stacks = static_cast<int>(degraded.size());
    report.workers = job.workers;
    report.output_hashes.assign(degraded.size(), 0);

    auto timed_run = [&](int workers) {
        std::vector<Image> out(degraded.size());
        const auto t0 = std::chrono::steady_clock::now();
        parallel_for(degraded.size(), workers, [&](size_t i) { out[i] = fuser.fuse(degraded[i]); });
        const auto t1 = std::chrono::steady_clock::now();
        for (size_t i = 0; i < out.size(); ++i)
            report.output_hashes[i] = fnv1a(out[i].pixels);
        return std::chrono::duration<double>(t1 - t0).count();
    };

    report.seconds_sequential = timed_run(1);
    const std::vector<uint64_t> sequential_hashes = report.output_hashes;
    report.seconds_parallel = timed_run(job.workers);
    if (sequential_hashes != report.output_hashes)
        fail(Errc::invalid_argument, "fusion outputs changed with the worker count");
    report.speedup = report.seconds_sequential / report.seconds_parallel;
    return report;
}

TimingReport run_bench(const BatchJob& job) {
    std::vector<ZStack> stacks;
    stacks.reserve(job.manifests.size());
    for (const auto& m : job.manifests)
        stacks.push_back(load_stack(read_manifest(m)));
    return run_bench(job, stacks);
}

EvalReport run_eval(const std::filesystem::path& reference_dir,
                    const std::filesystem::path& test_dir, double pixel_pitch,
                    const std::string& method_label, const std::string& scenario_label,
                    const std::filesystem::path& out_csv) {
    std::vector<std::filesystem::path> refs;
    for (const auto& entry : std::filesystem::directory_iterator(reference_dir))
        if (entry.path().extension() == ".pgm")
            refs.push_back(entry.path());
    if (refs.empty())
        fail(Errc::missing_file, "no .pgm files in " + reference_dir.string());
    std::sort(refs.begin(), refs.end());

    EvalReport report;
    std::vector<double> ssims, dices;
    for (const auto& ref_path : refs) {
        const auto test_path = test_dir / ref_path.filename();
        if (!std::filesystem::exists(test_path))
            fail(Errc::missing_file, "no counterpart for " + ref_path.filename().string() +
                                         " in " + test_dir.string());
        const Image ref = to_unit(load_pgm(ref_path), pixel_pitch);
        const Image test = to_unit(load_pgm(test_path), pixel_pitch);

        EvalRow row;
        row.stack_id = ref_path.stem().string();
        row.ssim_value = ssim(test, ref);
        ssims.push_back(row.ssim_value);
        try {
            row.dice_value = dice(segment_parasite_regions(test), segment_parasite_regions(ref));
            dices.push_back(*row.dice_value);
        } catch (const Error& e) {
            if (e.code() != Errc::degenerate_histogram)
                throw;
        }
        report.rows.push_back(std::move(row));
    }

    mean_std(ssims, report.ssim_mean, report.ssim_std);
    mean_std(dices, report.dice_mean, report.dice_std);
    report.summary_ssim = format_mean_std(report.ssim_mean, report.ssim_std);
    report.summary_dice = dices.empty() ? "" : format_mean_std(report.dice_mean, report.dice_std);

    if (!out_csv.empty()) {
        std::ofstream csv(out_csv);
        if (!csv)
            fail(Errc::unwritable_path, out_csv.string());
        csv << "stack_id,method,scenario,ssim,dice\n";
        for (const auto& row : report.rows) {
            char ssim_buf[32];
            std::snprintf(ssim_buf, sizeof ssim_buf, "%.6f", row.ssim_value);
            csv << row.stack_id << ',' << method_label << ',' << scenario_label << ','
                << ssim_buf << ',';
            if (row.dice_value) {
                char dice_buf[32];
                std::snprintf(dice_buf, sizeof dice_buf, "%.6f", *row.dice_value);
                csv << dice_buf;
            }
            csv << "\n";
        }
        csv << "summary," << method_label << ',' << scenario_label << ",\"" << report.summary_ssim
            << "\",\"" << report.summary_dice << "\"\n";
    }
    return report;
}

TrainResult run_train(const TrainJob& job) {
    std::vector<std::filesystem::path> manifests;
    for (const auto& entry : std::filesystem::directory_iterator(job.data_dir))
        if (entry.path().extension() == ".manifest")
            manifests.push_back(entry.path());
    if (manifests.empty())
        fail(Errc::missing_file, "no .manifest files in " + job.data_dir.string());
    std::sort(manifests.begin(), manifests.end());

    const FilterBank bank = make_bank(job.wavelet);
    std::vector<std::pair<ZStack, Image>> dataset;
    dataset.reserve(manifests.size());
    for (const auto& m : manifests) {
        const ZStack full = load_stack(read_manifest(m));
        const Image& first = full.planes.front();
        if (first.height % 4 != 0 || first.width % 4 != 0)
            fail(Errc::dimension_mismatch,
                 m.string() + ": training stacks need dims divisible by 4");
        Image target = fuse_wavelet(full, bank, job.levels);
        ZStack degraded = apply_scenario(full, job.scenario);
        ZStack input = pre_upsample(degraded, first.height, first.width);
        dataset.emplace_back(std::move(input), std::move(target));
    }

    ArchConfig arch = job.arch;
    if (arch.variant == Variant::volumetric) {
        arch.input_planes = static_cast<int>(dataset.front().first.planes.size());
        for (const auto& sample : dataset)
            if (static_cast<int>(sample.first.planes.size()) != arch.input_planes)
                fail(Errc::dimension_mismatch,
                     "volumetric training needs a uniform plane count");
    }

    NetworkParams params = init_params(arch, job.tcfg.seed, Precision::f32);
    TrainResult result = train(std::move(params), arch, dataset, job.tcfg);

    if (!job.out_weights.empty())
        save_weights(result.params, arch, job.out_weights);
    if (!job.loss_csv.empty()) {
        std::ofstream csv(job.loss_csv);
        if (!csv)
            fail(Errc::unwritable_path, job.loss_csv.string());
        csv << "step,loss\n";
        for (size_t i = 0; i < result.loss_history.size(); ++i) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.9f", result.loss_history[i]);
            csv << i << ',' << buf << "\n";
        }
    }
    return result;
}

} // namespace edof
