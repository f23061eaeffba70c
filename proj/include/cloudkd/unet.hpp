#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "cloudkd/common.hpp"

namespace cloudkd {

// ---------------------------------------------------------------------------
// Declarative network description.
// ---------------------------------------------------------------------------

struct ArchitectureSpec {
    int in_channels = 4;
    int num_classes = 2;
    std::vector<int> encoder_widths; // one entry per depth, 2..5 entries
    int bottleneck_width = 0;
    int convs_per_block = 1; // 1 (compact student) or 2 (classic)
    bool use_batchnorm = true;

    int depth() const { return static_cast<int>(encoder_widths.size()); }
    void validate() const; // throws ConfigError

    std::string canonical_string() const;
    std::array<uint8_t, 32> hash() const; // SHA-256 of canonical_string()

    // Canonical compact student: 497,970 trainable parameters.
    static ArchitectureSpec reference_student(int in_channels = 4, int num_classes = 2);
    // Default distillation teacher: ~8.5M trainable parameters (>= 10x student).
    static ArchitectureSpec reference_teacher(int in_channels = 4, int num_classes = 2);
};

// Pure function of the spec; counts conv/upconv kernels + biases and the
// normalization affine parameters (running stats are buffers, not counted).
size_t count_parameters(const ArchitectureSpec& spec);

// ---------------------------------------------------------------------------
// Dense NCHW float tensor.
// ---------------------------------------------------------------------------

struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, 0.f) {}

    size_t plane() const { return static_cast<size_t>(h) * w; }
    size_t size() const { return data.size(); }
    float* ptr(int ni, int ci) { return data.data() + (static_cast<size_t>(ni) * c + ci) * plane(); }
    const float* ptr(int ni, int ci) const {
        return data.data() + (static_cast<size_t>(ni) * c + ci) * plane();
    }
    float& at(int ni, int ci, int y, int x) { return ptr(ni, ci)[static_cast<size_t>(y) * w + x]; }
    float at(int ni, int ci, int y, int x) const {
        return ptr(ni, ci)[static_cast<size_t>(y) * w + x];
    }
    void zero() { std::fill(data.begin(), data.end(), 0.f); }
};

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Serialized weights (CWGT container payload).
// ---------------------------------------------------------------------------

struct NamedTensor {
    std::string name;
    std::vector<uint32_t> shape;
    std::vector<float> values;
};

struct ModelWeights {
    std::array<uint8_t, 32> spec_hash = {};
    std::vector<NamedTensor> tensors;
};

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Layers. Each layer owns parameters, gradients, and the activations cached
// by the last train-mode forward.
// ---------------------------------------------------------------------------

// A view over one trainable (or buffer) tensor inside the model.
struct ParamRef {
    std::string name;
    std::vector<uint32_t> shape;
    float* values = nullptr;
    float* grads = nullptr; // nullptr for buffers (running stats)
    size_t count = 0;
    bool trainable = true;
};

class Conv2d {
public:
    Conv2d(int in_ch, int out_ch, int kernel); // stride 1, same padding
    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& dy); // accumulates weight grads, returns dx
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init(Rng& rng);

    int in_ch() const { return in_ch_; }
    int out_ch() const { return out_ch_; }

private:
    int in_ch_, out_ch_, k_, pad_;
    std::vector<float> w_, b_, gw_, gb_;
    Tensor x_;
};

class ConvTranspose2d { // kernel 2, stride 2
public:
    ConvTranspose2d(int in_ch, int out_ch);
    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& dy);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init(Rng& rng);

private:
    int in_ch_, out_ch_;
    std::vector<float> w_, b_, gw_, gb_; // w: [in][out][2][2]
    Tensor x_;
};

class BatchNorm2d {
public:
    explicit BatchNorm2d(int channels);
    Tensor forward(const Tensor& x, Mode mode, bool cache);
    Tensor backward(const Tensor& dy);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init();

    static constexpr float kMomentum = 0.1f;
    static constexpr float kEpsilon = 1e-5f;

private:
    int channels_;
    std::vector<float> gamma_, beta_, g_gamma_, g_beta_;
    std::vector<float> running_mean_, running_var_;
    Tensor xhat_;
    std::vector<float> inv_std_;
};

class ReLU {
public:
    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& dy);

private:
    Tensor y_;
};

class MaxPool2x2 {
public:
    Tensor forward(const Tensor& x, bool cache);
    Tensor backward(const Tensor& dy);

private:
    std::vector<uint32_t> argmax_;
    int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;
};

// convs_per_block x (conv3x3 -> [BN] -> ReLU)
class ConvBlock {
public:
    ConvBlock(int in_ch, int out_ch, int convs, bool batchnorm);
    Tensor forward(const Tensor& x, Mode mode, bool cache);
    Tensor backward(const Tensor& dy);
    void collect(const std::string& prefix, std::vector<ParamRef>& out);
    void init(Rng& rng);

private:
    std::vector<Conv2d> convs_;
    std::vector<BatchNorm2d> bns_;
    std::vector<ReLU> relus_;
    bool use_bn_;
};

// ---------------------------------------------------------------------------
// The U-Net. Encoder blocks with 2x2 max-pool downsampling, a bottleneck
// block, transposed-conv upsampling with skip concatenation, and a 1x1 head.
// ---------------------------------------------------------------------------

class UNet {
public:
    static UNet build(const ArchitectureSpec& spec, uint64_t init_seed = 0);

    const ArchitectureSpec& spec() const { return spec_; }

    // Output keeps the input's spatial size, with num_classes channels.
    // H and W must be divisible by 2^depth; eval mode is deterministic and
    // per-sample independent.
    Tensor forward(const Tensor& x, Mode mode);
    // Backpropagate d(loss)/d(logits) from the last train-mode forward;
    // accumulates gradients on every trainable parameter.
    void backward(const Tensor& dlogits);

    std::vector<ParamRef> params(); // trainable + buffers, serialization order
    void zero_grad();
    size_t parameter_count() const { return count_parameters(spec_); }

    ModelWeights export_weights();
    void import_weights(const ModelWeights& weights);
    void save(const std::filesystem::path& path);
    static UNet load(const std::filesystem::path& path, const ArchitectureSpec& spec);

private:
    explicit UNet(const ArchitectureSpec& spec);

    ArchitectureSpec spec_;
    std::vector<ConvBlock> enc_;
    std::vector<MaxPool2x2> pool_;
    ConvBlock bottleneck_;
    std::vector<ConvTranspose2d> up_;   // index d upsamples into depth d
    std::vector<ConvBlock> dec_;
    Conv2d head_;
};

} // namespace cloudkd
