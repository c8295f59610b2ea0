#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "edof/metrics.hpp"
#include "edof/pipeline.hpp"

using namespace edof;

#define CHECK_ERRC(expr, errc)                                                                     \
    do {                                                                                           \
        try {                                                                                      \
            expr;                                                                                  \
            FAIL_CHECK("expected " #errc ", nothing thrown");                                      \
        } catch (const Error& e) {                                                                 \
            CHECK(e.code() == errc);                                                               \
        }                                                                                          \
    } while (0)

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "edof_test_pipeline" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// writes `count` synthetic stacks and returns their manifest paths
std::vector<std::filesystem::path> write_synthetic(const std::filesystem::path& dir, int count,
                                                   int planes, int size, uint64_t seed0) {
    std::vector<std::filesystem::path> manifests;
    for (int i = 0; i < count; ++i) {
        SynthConfig cfg;
        cfg.seed = seed0 + static_cast<uint64_t>(i);
        cfg.height = cfg.width = size;
        cfg.planes = planes;
        const SynthStack s = gen_synthetic_stack(cfg);

        StackManifest m;
        m.z_step_um = s.stack.z_step;
        m.pixel_pitch_um = s.stack.planes.front().pixel_pitch;
        char id[32];
        std::snprintf(id, sizeof id, "stack_%03d", i);
        for (size_t p = 0; p < s.stack.planes.size(); ++p) {
            char name[48];
            std::snprintf(name, sizeof name, "%s_plane_%02zu.pgm", id, p);
            save_pgm(s.stack.planes[p], 16, dir / name);
            m.plane_paths.push_back(dir / name);
        }
        const auto mp = dir / (std::string(id) + ".manifest");
        write_manifest(m, mp);
        manifests.push_back(mp);
    }
    return manifests;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("parallel_for covers every index exactly once") {
    std::vector<int> hits(500, 0);
    parallel_for(hits.size(), 4, [&](size_t i) { hits[i] += 1; });
    for (int h : hits)
        CHECK(h == 1);
}

TEST_CASE("run_fuse_batch outputs are identical for any worker count") {
    const auto data = fresh_dir("batch_data");
    const auto manifests = write_synthetic(data, 4, 3, 32, 1000);

    const auto out1 = fresh_dir("batch_w1");
    const auto out4 = fresh_dir("batch_w4");

    BatchJob job;
    job.manifests = manifests;
    job.workers = 1;
    job.out_dir = out1;
    const BatchSummary s1 = run_fuse_batch(job);
    CHECK(s1.failures == 0);

    job.workers = 4;
    job.out_dir = out4;
    const BatchSummary s4 = run_fuse_batch(job);
    CHECK(s4.failures == 0);

    for (const auto& m : manifests) {
        const auto name = m.stem().string() + "_fused.pgm";
        CHECK(file_bytes(out1 / name) == file_bytes(out4 / name));
    }
}

TEST_CASE("run_fuse_batch records failures and continues") {
    const auto data = fresh_dir("batch_fail");
    auto manifests = write_synthetic(data, 2, 2, 32, 2000);
    manifests.push_back(data / "missing.manifest"); // no such file

    BatchJob job;
    job.manifests = manifests;
    job.workers = 2;
    job.out_dir = fresh_dir("batch_fail_out");
    const BatchSummary summary = run_fuse_batch(job);
    CHECK(summary.failures == 1);
    CHECK(summary.results.size() == 3);

    // CSV is sorted by stack id with a fixed header
    std::ifstream csv(job.out_dir / "fuse_summary.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "stack_id,method,scenario,planes,seconds,status");
    std::vector<std::string> ids;
    while (std::getline(csv, line))
        ids.push_back(line.substr(0, line.find(',')));
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(ids.size() == 3);
}

TEST_CASE("run_fuse_batch requires manifests") {
    BatchJob job;
    job.out_dir = fresh_dir("batch_empty");
    CHECK_ERRC(run_fuse_batch(job), Errc::invalid_argument);
}

TEST_CASE("run_bench reports consistent hashes and sane speedup") {
    const auto data = fresh_dir("bench_data");
    const auto manifests = write_synthetic(data, 8, 2, 32, 3000);
    BatchJob job;
    job.manifests = manifests;
    job.workers = 2;
    const TimingReport r = run_bench(job);
    CHECK(r.stacks == 8);
    CHECK(r.planes == 2);
    CHECK(r.seconds_sequential > 0.0);
    CHECK(r.seconds_parallel > 0.0);
    CHECK(r.speedup == doctest::Approx(r.seconds_sequential / r.seconds_parallel));
    CHECK(r.output_hashes.size() == 8);
}

TEST_CASE("run_bench needs at least 8 stacks") {
    const auto data = fresh_dir("bench_small");
    const auto manifests = write_synthetic(data, 2, 2, 32, 4000);
    BatchJob job;
    job.manifests = manifests;
    CHECK_ERRC(run_bench(job), Errc::invalid_argument);
}

TEST_CASE("run_eval against itself yields ssim 1 and dice 1") {
    const auto dir = fresh_dir("eval_self");
    for (int i = 0; i < 3; ++i) {
        const SynthStack s = gen_synthetic_stack(
            {static_cast<uint64_t>(5000 + i), 64, 64, 3, 5, 0.4, 1.2, 1.5, 0.01, 0.065, 0.5});
        char name[32];
        std::snprintf(name, sizeof name, "stack_%03d.pgm", i);
        save_pgm(s.ground_truth, 16, dir / name);
    }
    const auto csv = fresh_dir("eval_out") / "eval.csv";
    const EvalReport r = run_eval(dir, dir, 0.065, "wavelet", "none", csv);
    REQUIRE(r.rows.size() == 3);
    for (const auto& row : r.rows) {
        CHECK(row.ssim_value == doctest::Approx(1.0).epsilon(1e-12));
        REQUIRE(row.dice_value.has_value());
        CHECK(*row.dice_value == 1.0);
    }
    CHECK(r.summary_ssim == "1.00 ± 0.00");

    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "stack_id,method,scenario,ssim,dice");
}

TEST_CASE("run_eval rejects unmatched ids") {
    const auto ref = fresh_dir("eval_ref");
    const auto test = fresh_dir("eval_test");
    save_pgm(make_image(32, 32, 0.065, 0.5), 8, ref / "a.pgm");
    CHECK_ERRC(run_eval(ref, test, 0.065, "-", "-", ""), Errc::missing_file);
}

TEST_CASE("run_train produces weights and a deterministic loss log") {
    const auto data = fresh_dir("train_data");
    write_synthetic(data, 2, 4, 32, 6000);

    TrainJob job;
    job.data_dir = data;
    job.arch.base_width = 2;
    job.arch.residual_blocks = 0;
    job.tcfg.steps = 6;
    job.tcfg.seed = 3;
    job.scenario.kind = Scenario::Kind::zstep;
    job.scenario.stride = 2;
    job.out_weights = fresh_dir("train_out") / "model.edof";
    job.loss_csv = fresh_dir("train_out2") / "loss.csv";

    const TrainResult a = run_train(job);
    CHECK(a.loss_history.size() == 6);
    const auto [params, cfg] = load_weights(job.out_weights);
    CHECK(cfg.base_width == 2);
    for (size_t i = 0; i < params.tensors.size(); ++i)
        CHECK(params.tensors[i].v == a.params.tensors[i].v);

    const TrainResult b = run_train(job);
    CHECK(a.loss_history == b.loss_history);

    std::ifstream csv(job.loss_csv);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "step,loss");
    int rows = 0;
    while (std::getline(csv, line))
        ++rows;
    CHECK(rows == 6);
}

TEST_CASE("mean-std summary formatting") {
    CHECK(format_mean_std(0.8, 0.0) == "0.80 ± 0.00"); // e.g. values {0.8, 0.8, 0.8}
    CHECK(format_mean_std(0.7712, 0.0341) == "0.77 ± 0.03");
}

TEST_CASE("volumetric training feeds a cnn-3d batch") {
    const auto data = fresh_dir("train3d_data");
    write_synthetic(data, 2, 6, 32, 7000);

    TrainJob job;
    job.data_dir = data;
    job.arch.variant = Variant::volumetric;
    job.arch.base_width = 2;
    job.arch.residual_blocks = 0;
    job.tcfg.steps = 2;
    job.scenario.kind = Scenario::Kind::zstep;
    job.scenario.stride = 2; // 6 planes -> 3
    job.out_weights = fresh_dir("train3d_out") / "model3d.edof";
    run_train(job);

    const auto [params, cfg] = load_weights(job.out_weights);
    CHECK(cfg.variant == Variant::volumetric);
    CHECK(cfg.input_planes == 3);

    BatchJob batch;
    for (const auto& entry : std::filesystem::directory_iterator(data))
        if (entry.path().extension() == ".manifest")
            batch.manifests.push_back(entry.path());
    std::sort(batch.manifests.begin(), batch.manifests.end());
    batch.method = FuseMethod::cnn_3d;
    batch.scenario = job.scenario;
    batch.weights = job.out_weights;
    batch.out_dir = fresh_dir("batch3d_out");
    const BatchSummary summary = run_fuse_batch(batch);
    CHECK(summary.failures == 0);
    // output resolution is restored to the full stack size
    const Image fused =
        to_unit(load_pgm(batch.out_dir / "stack_000_fused.pgm"), 0.065);
    CHECK(fused.height == 32);
    CHECK(fused.width == 32);
}

TEST_CASE("lowmag training pre-upsamples the degraded inputs") {
    const auto data = fresh_dir("train_lowmag");
    write_synthetic(data, 2, 3, 32, 7500);

    TrainJob job;
    job.data_dir = data;
    job.arch.base_width = 2;
    job.arch.residual_blocks = 0;
    job.tcfg.steps = 2;
    job.scenario.kind = Scenario::Kind::lowmag;
    job.scenario.scale = 2.0; // 32 px planes shrink to 16, upsampled back to 32
    const TrainResult r = run_train(job);
    CHECK(r.loss_history.size() == 2);
}

TEST_CASE("apply_scenario dispatches by kind") {
    const SynthStack s = gen_synthetic_stack({1, 32, 32, 6, 3, 0.4, 1.2, 1.0, 0.0, 0.065, 0.5});

    Scenario none;
    CHECK(apply_scenario(s.stack, none).planes.size() == 6);

    Scenario zstep;
    zstep.kind = Scenario::Kind::zstep;
    zstep.stride = 3;
    CHECK(apply_scenario(s.stack, zstep).planes.size() == 2);

    Scenario bin;
    bin.kind = Scenario::Kind::bin;
    bin.factor = 4;
    CHECK(apply_scenario(s.stack, bin).planes.front().width == 8);

    Scenario lowmag;
    lowmag.kind = Scenario::Kind::lowmag;
    lowmag.scale = 2.0;
    CHECK(apply_scenario(s.stack, lowmag).planes.front().width == 16);
}
