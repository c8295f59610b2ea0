#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "edof/image.hpp"

namespace edof {

enum class Variant : uint8_t {
    max_fusion = 0, // per-plane 2D encoder, element-wise max across planes
    volumetric = 1, // 3D encoder, mean over z before the residual stack
};

struct ArchConfig {
    Variant variant = Variant::max_fusion;
    int base_width = 32;    // F
    int residual_blocks = 9; // R
    int input_planes = 0;   // fixed depth for the volumetric variant, free for max
};

/// Storage precision of the parameter values. f32 params hold values that
/// are exactly representable in 32-bit floats, which is what the weights
/// file stores; compute is always double.
enum class Precision : uint8_t { f32, f64 };

struct Tensor {
    std::vector<int> dims;
    std::vector<double> v;

    size_t count() const {
        size_t n = 1;
        for (int d : dims)
            n *= static_cast<size_t>(d);
        return n;
    }
};

struct NetworkParams {
    std::vector<Tensor> tensors;
    Precision precision = Precision::f32;
};

/// Shape and fan metadata of every tensor, in architecture order:
/// encoder (3 conv layers), R residual blocks (2 convs each),
/// decoder (2 transposed convs + output conv). Weight layouts:
/// conv [out,in,kh,kw] (3D convs [out,in,kd,kh,kw]), transposed conv
/// [in,out,kh,kw], bias [out].
struct TensorSpec {
    std::vector<int> dims;
    int fan_in = 0;
    int fan_out = 0;
    bool bias = false;
};
std::vector<TensorSpec> tensor_specs(const ArchConfig& cfg);

/// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases,
/// deterministic in seed.
NetworkParams init_params(const ArchConfig& cfg, uint64_t seed,
                          Precision precision = Precision::f32);

/// Per-plane bilinear upsampling with corner-aligned sampling.
ZStack pre_upsample(const ZStack& stack, int target_h, int target_w);

/// Runs the network on a stack whose planes are already at the target
/// resolution (dims divisible by 4). Output dims equal plane dims and the
/// value range is (tanh+1)/2, a subset of [0,1].
Image forward(const NetworkParams& params, const ArchConfig& cfg, const ZStack& stack);

double mse_loss(const Image& pred, const Image& target);

struct Gradients {
    std::vector<Tensor> tensors; // same shapes as the params
    double loss = 0.0;
};

/// Exact reverse-mode gradients of mse_loss(forward(stack), target).
/// Max fusion routes each element's gradient to the winning plane
/// (ties: lowest plane index); the z mean splits gradients equally.
Gradients backward(const NetworkParams& params, const ArchConfig& cfg, const ZStack& stack,
                   const Image& target);

struct TrainConfig {
    int steps = 100;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int batch_size = 1;
    int patch = 0; // when > 0, train on seeded random patch crops of this size
    uint64_t seed = 1;
};

struct TrainResult {
    NetworkParams params;
    std::vector<double> loss_history; // mean batch loss per step, pre-update
};

/// Adam on a dataset of (stack, target) pairs; batch order is a fixed
/// deterministic cycle, so identical seeds give identical histories.
TrainResult train(NetworkParams params, const ArchConfig& cfg,
                  const std::vector<std::pair<ZStack, Image>>& dataset,
                  const TrainConfig& tcfg);

/// Weights file: magic "EDOF", u32 version 1, u8 variant, u32 F, u32 R,
/// u32 D (0 for max), then per tensor u8 rank, u32 dims[rank] and raw
/// 32-bit little-endian values, row-major, with no padding.
void save_weights(const NetworkParams& params, const ArchConfig& cfg,
                  const std::filesystem::path& path);
std::pair<NetworkParams, ArchConfig> load_weights(const std::filesystem::path& path);

} // namespace edof
