#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "edof/acquisition.hpp"
#include "edof/metrics.hpp"
#include "edof/pipeline.hpp"

namespace {

using namespace edof;

std::vector<std::filesystem::path> collect_manifests(const std::vector<std::string>& files,
                                                     const std::string& dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& f : files)
        out.emplace_back(f);
    if (!dir.empty()) {
        for (const auto& entry : std::filesystem::directory_iterator(dir))
            if (entry.path().extension() == ".manifest")
                out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

FuseMethod parse_method(const std::string& m) {
    if (m == "wavelet") return FuseMethod::wavelet;
    if (m == "cnn-max") return FuseMethod::cnn_max;
    if (m == "cnn-3d") return FuseMethod::cnn_3d;
    fail(Errc::invalid_argument, "unknown method '" + m + "'");
}

Scenario parse_scenario(const std::string& mode, int stride, int factor, double na,
                        double wavelength, double downscale) {
    Scenario s;
    if (mode == "none") {
        s.kind = Scenario::Kind::none;
    } else if (mode == "zstep") {
        s.kind = Scenario::Kind::zstep;
        s.stride = stride;
    } else if (mode == "bin") {
        s.kind = Scenario::Kind::bin;
        s.factor = factor;
    } else if (mode == "lowmag") {
        s.kind = Scenario::Kind::lowmag;
        s.na = na;
        s.wavelength = wavelength;
        s.scale = downscale;
    } else {
        fail(Errc::invalid_argument, "unknown scenario mode '" + mode + "'");
    }
    return s;
}

void write_stack(const ZStack& stack, const std::filesystem::path& dir,
                 const std::string& stack_id, int bits) {
    StackManifest m;
    m.z_step_um = stack.z_step;
    m.pixel_pitch_um = stack.planes.front().pixel_pitch;
    for (size_t p = 0; p < stack.planes.size(); ++p) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_plane_%02zu.pgm", stack_id.c_str(), p);
        const auto path = dir / name;
        save_pgm(stack.planes[p], bits, path);
        m.plane_paths.push_back(path);
    }
    write_manifest(m, dir / (stack_id + ".manifest"));
}

int run(int argc, char** argv) {
    CLI::App app{"Extended depth-of-field toolkit for microscopy z-stacks"};
    app.require_subcommand(1);

    // --- fuse ---------------------------------------------------------
    auto* fuse = app.add_subcommand("fuse", "Fuse z-stacks into EDoF images");
    std::vector<std::string> fuse_files;
    std::string fuse_dir, method = "wavelet", wavelet = "sym8", scenario_mode = "none";
    std::string out_dir = "out", weights_file;
    int workers = 1, levels = 12, stride = 3, factor = 4, bits = 16;
    double na = 0.6, wavelength = 0.55, downscale = 2.5;
    fuse->add_option("manifests", fuse_files, "stack manifest files");
    fuse->add_option("--dir", fuse_dir, "directory of .manifest files");
    fuse->add_option("--method", method, "wavelet | cnn-max | cnn-3d");
    fuse->add_option("--levels", levels, "wavelet decomposition depth (capped)");
    fuse->add_option("--wavelet", wavelet, "sym8 | haar");
    fuse->add_option("--weights", weights_file, "weights file for cnn methods");
    fuse->add_option("--scenario", scenario_mode, "none | zstep | bin | lowmag");
    fuse->add_option("--stride", stride, "zstep scenario stride");
    fuse->add_option("--factor", factor, "bin scenario factor");
    fuse->add_option("--na", na, "lowmag numerical aperture");
    fuse->add_option("--wavelength", wavelength, "lowmag wavelength (um)");
    fuse->add_option("--downscale", downscale, "lowmag downsampling factor");
    fuse->add_option("--workers", workers, "worker pool size");
    fuse->add_option("--out", out_dir, "output directory");
    fuse->add_option("--bits", bits, "output bit depth (8 or 16)");

    // --- simulate -----------------------------------------------------
    auto* simulate = app.add_subcommand("simulate", "Degrade stacks into an acquisition scenario");
    std::vector<std::string> sim_files;
    std::string sim_dir, sim_mode = "zstep", sim_out = "out";
    simulate->add_option("manifests", sim_files, "stack manifest files");
    simulate->add_option("--dir", sim_dir, "directory of .manifest files");
    simulate->add_option("--mode", sim_mode, "zstep | bin | lowmag");
    simulate->add_option("--stride", stride, "zstep stride");
    simulate->add_option("--factor", factor, "bin factor");
    simulate->add_option("--na", na, "lowmag numerical aperture");
    simulate->add_option("--wavelength", wavelength, "lowmag wavelength (um)");
    simulate->add_option("--downscale", downscale, "lowmag downsampling factor");
    simulate->add_option("--out", sim_out, "output directory");
    simulate->add_option("--bits", bits, "output bit depth (8 or 16)");

    // --- synth --------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate synthetic stacks with ground truth");
    SynthConfig synth_cfg;
    int synth_count = 1;
    std::string synth_out = "out";
    uint64_t seed = 1;
    std::vector<int> synth_size = {64};
    synth->add_option("--seed", seed, "base RNG seed");
    synth->add_option("--count", synth_count, "number of stacks");
    synth->add_option("--planes", synth_cfg.planes, "planes per stack");
    synth->add_option("--size", synth_size, "image size: H [W]")->expected(1, 2);
    synth->add_option("--objects", synth_cfg.objects, "blob count");
    synth->add_option("--noise", synth_cfg.noise_sigma, "additive noise sigma");
    synth->add_option("--blur-slope", synth_cfg.blur_slope_px, "defocus sigma per plane");
    synth->add_option("--pitch", synth_cfg.pixel_pitch_um, "pixel pitch (um)");
    synth->add_option("--z-step", synth_cfg.z_step_um, "z step (um)");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--bits", bits, "output bit depth (8 or 16)");

    // --- eval ---------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Score fused images against references");
    std::string ref_dir, test_dir, eval_csv = "eval.csv", eval_method = "-", eval_scenario = "-";
    double pitch = 0.065;
    eval->add_option("--reference", ref_dir, "reference image directory")->required();
    eval->add_option("--test", test_dir, "test image directory")->required();
    eval->add_option("--pitch", pitch, "pixel pitch (um) for segmentation");
    eval->add_option("--method", eval_method, "method label for the CSV");
    eval->add_option("--scenario", eval_scenario, "scenario label for the CSV");
    eval->add_option("--out", eval_csv, "output CSV path");

    // --- bench --------------------------------------------------------
    auto* bench = app.add_subcommand("bench", "Time a fusion workload, sequential vs parallel");
    std::vector<std::string> bench_files;
    std::string bench_dir;
    int bench_stacks = 100, bench_planes = 3, bench_size = 512;
    bench->add_option("manifests", bench_files, "stack manifest files");
    bench->add_option("--dir", bench_dir, "directory of .manifest files");
    bench->add_option("--stacks", bench_stacks, "synthetic stack count when no manifests given");
    bench->add_option("--planes", bench_planes, "synthetic plane count");
    bench->add_option("--size", bench_size, "synthetic image size");
    bench->add_option("--seed", seed, "synthetic workload seed");
    bench->add_option("--method", method, "wavelet | cnn-max | cnn-3d");
    bench->add_option("--levels", levels, "wavelet decomposition depth");
    bench->add_option("--wavelet", wavelet, "sym8 | haar");
    bench->add_option("--weights", weights_file, "weights file for cnn methods");
    bench->add_option("--workers", workers, "parallel worker count");

    // --- train --------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train a fusion network on wavelet targets");
    TrainJob tjob;
    std::string train_data, train_arch = "max", train_out = "model.edof", train_loss = "loss.csv";
    int train_f = 4, train_r = 2;
    train_cmd->add_option("--data", train_data, "directory of .manifest stacks")->required();
    train_cmd->add_option("--arch", train_arch, "max | 3d");
    train_cmd->add_option("--width", train_f, "base channel width F");
    train_cmd->add_option("--blocks", train_r, "residual block count R");
    train_cmd->add_option("--steps", tjob.tcfg.steps, "Adam steps");
    train_cmd->add_option("--lr", tjob.tcfg.learning_rate, "learning rate");
    train_cmd->add_option("--batch", tjob.tcfg.batch_size, "batch size");
    train_cmd->add_option("--patch", tjob.tcfg.patch, "square patch crop (0 = whole image)");
    train_cmd->add_option("--seed", tjob.tcfg.seed, "init/crop seed");
    train_cmd->add_option("--scenario", scenario_mode, "none | zstep | bin | lowmag");
    train_cmd->add_option("--stride", stride, "zstep stride");
    train_cmd->add_option("--factor", factor, "bin factor");
    train_cmd->add_option("--na", na, "lowmag numerical aperture");
    train_cmd->add_option("--downscale", downscale, "lowmag downsampling factor");
    train_cmd->add_option("--levels", tjob.levels, "wavelet target depth");
    train_cmd->add_option("--wavelet", tjob.wavelet, "sym8 | haar");
    train_cmd->add_option("--out", train_out, "weights output path");
    train_cmd->add_option("--loss-csv", train_loss, "per-step loss log");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (fuse->parsed()) {
        BatchJob job;
        job.manifests = collect_manifests(fuse_files, fuse_dir);
        job.method = parse_method(method);
        job.scenario = parse_scenario(scenario_mode, stride, factor, na, wavelength, downscale);
        job.workers = workers;
        job.out_dir = out_dir;
        job.levels = levels;
        job.wavelet = wavelet;
        job.weights = weights_file;
        job.bit_depth = bits;
        const BatchSummary summary = run_fuse_batch(job);
        for (const auto& r : summary.results)
            if (!r.ok)
                std::cerr << r.stack_id << ": " << (r.error.empty() ? r.error_code : r.error)
                          << "\n";
        std::cout << summary.results.size() - summary.failures << "/" << summary.results.size()
                  << " stacks fused -> " << out_dir << "\n";
        return summary.failures > 0 ? 1 : 0;
    }

    if (simulate->parsed()) {
        const auto manifests = collect_manifests(sim_files, sim_dir);
        if (manifests.empty())
            fail(Errc::invalid_argument, "no stack manifests given");
        const Scenario s = parse_scenario(sim_mode, stride, factor, na, wavelength, downscale);
        std::filesystem::create_directories(sim_out);
        for (const auto& m : manifests) {
            const ZStack degraded = apply_scenario(load_stack(read_manifest(m)), s);
            write_stack(degraded, sim_out, m.stem().string(), bits);
        }
        std::cout << manifests.size() << " stacks degraded (" << s.label() << ") -> " << sim_out
                  << "\n";
        return 0;
    }

    if (synth->parsed()) {
        synth_cfg.height = synth_size.front();
        synth_cfg.width = synth_size.back();
        std::filesystem::create_directories(synth_out);
        for (int i = 0; i < synth_count; ++i) {
            synth_cfg.seed = seed + static_cast<uint64_t>(i);
            const SynthStack s = gen_synthetic_stack(synth_cfg);
            char stack_id[32];
            std::snprintf(stack_id, sizeof stack_id, "stack_%03d", i);
            write_stack(s.stack, synth_out, stack_id, bits);
            save_pgm(s.ground_truth, bits,
                     std::filesystem::path(synth_out) / (std::string(stack_id) + "_truth.pgm"));
        }
        std::cout << synth_count << " synthetic stacks -> " << synth_out << "\n";
        return 0;
    }

    if (eval->parsed()) {
        const EvalReport report =
            run_eval(ref_dir, test_dir, pitch, eval_method, eval_scenario, eval_csv);
        std::cout << "ssim " << report.summary_ssim << "  dice "
                  << (report.summary_dice.empty() ? "n/a" : report.summary_dice) << "  ("
                  << report.rows.size() << " stacks) -> " << eval_csv << "\n";
        return 0;
    }

    if (bench->parsed()) {
        BatchJob job;
        job.method = parse_method(method);
        job.workers = workers;
        job.levels = levels;
        job.wavelet = wavelet;
        job.weights = weights_file;
        job.manifests = collect_manifests(bench_files, bench_dir);

        TimingReport report;
        if (job.manifests.empty()) {
            SynthConfig cfg;
            cfg.height = cfg.width = bench_size;
            cfg.planes = bench_planes;
            cfg.noise_sigma = 0.0;
            std::vector<ZStack> stacks;
            stacks.reserve(static_cast<size_t>(bench_stacks));
            for (int i = 0; i < bench_stacks; ++i) {
                cfg.seed = seed + static_cast<uint64_t>(i);
                stacks.push_back(gen_synthetic_stack(cfg).stack);
            }
            report = run_bench(job, stacks);
        } else {
            report = run_bench(job);
        }
        std::printf("method %s: %d stacks x %d planes\n", report.method.c_str(), report.stacks,
                    report.planes);
        std::printf("sequential %.3f s | %d workers %.3f s | speedup %.2fx\n",
                    report.seconds_sequential, report.workers, report.seconds_parallel,
                    report.speedup);
        return 0;
    }

    if (train_cmd->parsed()) {
        tjob.data_dir = train_data;
        tjob.arch.variant = train_arch == "3d" ? Variant::volumetric : Variant::max_fusion;
        tjob.arch.base_width = train_f;
        tjob.arch.residual_blocks = train_r;
        if (tjob.arch.variant == Variant::volumetric)
            tjob.arch.input_planes = 1; // fixed up from the dataset in run_train
        tjob.scenario = parse_scenario(scenario_mode, stride, factor, na, wavelength, downscale);
        tjob.out_weights = train_out;
        tjob.loss_csv = train_loss;
        const TrainResult result = run_train(tjob);
        std::cout << "trained " << tjob.tcfg.steps << " steps, loss "
                  << (result.loss_history.empty() ? 0.0 : result.loss_history.front()) << " -> "
                  << (result.loss_history.empty() ? 0.0 : result.loss_history.back()) << ", weights "
                  << train_out << "\n";
        return 0;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const edof::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
