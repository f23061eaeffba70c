#include "cloudkd/unet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <openssl/evp.h>
#include <sstream>

namespace cloudkd {

// ---------------------------------------------------------------------------
// ArchitectureSpec
// ---------------------------------------------------------------------------

void ArchitectureSpec::validate() const {
    if (in_channels < 1) throw ConfigError("spec: in_channels must be positive");
    if (num_classes < 2) throw ConfigError("spec: num_classes must be >= 2");
    if (depth() < 2 || depth() > 5)
        throw ConfigError("spec: depth must be in [2,5]");
    for (int w : encoder_widths)
        if (w < 1) throw ConfigError("spec: encoder widths must be positive");
    if (bottleneck_width < 1)
        throw ConfigError("spec: bottleneck width must be positive");
    if (convs_per_block != 1 && convs_per_block != 2)
        throw ConfigError("spec: convs_per_block must be 1 or 2");
}

std::string ArchitectureSpec::canonical_string() const {
    std::ostringstream os;
    os << "unet-v1;in=" << in_channels << ";classes=" << num_classes << ";widths=";
    for (size_t i = 0; i < encoder_widths.size(); ++i) {
        if (i) os << ',';
        os << encoder_widths[i];
    }
    os << ";bottleneck=" << bottleneck_width << ";convs=" << convs_per_block
       << ";bn=" << (use_batchnorm ? 1 : 0);
    return os.str();
}

std::array<uint8_t, 32> ArchitectureSpec::hash() const {
    std::string s = canonical_string();
    std::array<uint8_t, 32> out{};
    unsigned int len = 0;
    EVP_Digest(s.data(), s.size(), out.data(), &len, EVP_sha256(), nullptr);
    return out;
}

ArchitectureSpec ArchitectureSpec::reference_student(int in_channels, int num_classes) {
    ArchitectureSpec spec;
    spec.in_channels = in_channels;
    spec.num_classes = num_classes;
    spec.encoder_widths = {16, 32, 64, 96};
    spec.bottleneck_width = 96;
    spec.convs_per_block = 1;
    spec.use_batchnorm = true;
    return spec;
}

ArchitectureSpec ArchitectureSpec::reference_teacher(int in_channels, int num_classes) {
    ArchitectureSpec spec;
    spec.in_channels = in_channels;
    spec.num_classes = num_classes;
    spec.encoder_widths = {48, 96, 192, 288};
    spec.bottleneck_width = 384;
    spec.convs_per_block = 2;
    spec.use_batchnorm = true;
    return spec;
}

size_t count_parameters(const ArchitectureSpec& spec) {
    spec.validate();
    auto conv = [](size_t cin, size_t cout, size_t k) { return cin * cout * k * k + cout; };
    auto bn = [&spec](size_t c) { return spec.use_batchnorm ? 2 * c : 0; };

    size_t total = 0;
    size_t prev = static_cast<size_t>(spec.in_channels);
    for (int wi : spec.encoder_widths) {
        size_t w = static_cast<size_t>(wi);
        for (int i = 0; i < spec.convs_per_block; ++i)
            total += conv(i == 0 ? prev : w, w, 3) + bn(w);
        prev = w;
    }
    size_t bott = static_cast<size_t>(spec.bottleneck_width);
    for (int i = 0; i < spec.convs_per_block; ++i)
        total += conv(i == 0 ? prev : bott, bott, 3) + bn(bott);
    prev = bott;
    for (auto it = spec.encoder_widths.rbegin(); it != spec.encoder_widths.rend(); ++it) {
        size_t w = static_cast<size_t>(*it);
        total += prev * w * 4 + w; // 2x2 transposed conv
        for (int i = 0; i < spec.convs_per_block; ++i)
            total += conv(i == 0 ? 2 * w : w, w, 3) + bn(w);
        prev = w;
    }
    total += prev * static_cast<size_t>(spec.num_classes) + spec.num_classes;
    return total;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_ch, int out_ch, int kernel)
    : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), pad_(kernel / 2) {
    size_t wn = static_cast<size_t>(out_ch) * in_ch * kernel * kernel;
    w_.assign(wn, 0.f);
    gw_.assign(wn, 0.f);
    b_.assign(out_ch, 0.f);
    gb_.assign(out_ch, 0.f);
}

void Conv2d::init(Rng& rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(in_ch_) * k_ * k_));
    for (float& v : w_) v = static_cast<float>(rng.normal() * std);
    std::fill(b_.begin(), b_.end(), 0.f);
}

Tensor Conv2d::forward(const Tensor& x, bool cache) {
    if (x.c != in_ch_) throw std::invalid_argument("conv: channel mismatch");
    if (cache) x_ = x;
    const int H = x.h, W = x.w;
    Tensor y(x.n, out_ch_, H, W);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < out_ch_; ++co) {
            float* O = y.ptr(n, co);
            std::fill(O, O + y.plane(), b_[co]);
            for (int ci = 0; ci < in_ch_; ++ci) {
                const float* I = x.ptr(n, ci);
                const float* Wk = &w_[(static_cast<size_t>(co) * in_ch_ + ci) * k_ * k_];
                if (k_ == 1) {
                    const float wv = Wk[0];
                    for (size_t i = 0; i < y.plane(); ++i) O[i] += wv * I[i];
                    continue;
                }
                for (int ky = 0; ky < k_; ++ky) {
                    const int dy = ky - pad_;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    for (int kx = 0; kx < k_; ++kx) {
                        const int dx = kx - pad_;
                        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        const float wv = Wk[ky * k_ + kx];
                        for (int yy = y0; yy < y1; ++yy) {
                            const float* src = I + static_cast<size_t>(yy + dy) * W + (x0 + dx);
                            float* dst = O + static_cast<size_t>(yy) * W + x0;
                            const int len = x1 - x0;
                            for (int i = 0; i < len; ++i) dst[i] += wv * src[i];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    const Tensor& x = x_;
    if (x.n == 0) throw std::logic_error("conv backward without cached forward");
    const int H = x.h, W = x.w;
    Tensor dx(x.n, in_ch_, H, W);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < out_ch_; ++co) {
            const float* D = dy.ptr(n, co);
            double sum = 0.0;
            for (size_t i = 0; i < dy.plane(); ++i) sum += D[i];
            gb_[co] += static_cast<float>(sum);
            for (int ci = 0; ci < in_ch_; ++ci) {
                const float* I = x.ptr(n, ci);
                float* X = dx.ptr(n, ci);
                const size_t wbase = (static_cast<size_t>(co) * in_ch_ + ci) * k_ * k_;
                if (k_ == 1) {
                    const float wv = w_[wbase];
                    double acc = 0.0;
                    for (size_t i = 0; i < x.plane(); ++i) {
                        X[i] += wv * D[i];
                        acc += static_cast<double>(I[i]) * D[i];
                    }
                    gw_[wbase] += static_cast<float>(acc);
                    continue;
                }
                for (int ky = 0; ky < k_; ++ky) {
                    const int dyo = ky - pad_;
                    const int y0 = std::max(0, -dyo), y1 = std::min(H, H - dyo);
                    for (int kx = 0; kx < k_; ++kx) {
                        const int dxo = kx - pad_;
                        const int x0 = std::max(0, -dxo), x1 = std::min(W, W - dxo);
                        const float wv = w_[wbase + ky * k_ + kx];
                        double acc = 0.0;
                        for (int yy = y0; yy < y1; ++yy) {
                            // forward: y[p] += w * x[p + off]  =>
                            // dx[p + off] += w * dy[p];  gw += x[p + off] * dy[p]
                            const float* drow = D + static_cast<size_t>(yy) * W + x0;
                            const float* irow = I + static_cast<size_t>(yy + dyo) * W + (x0 + dxo);
                            float* xrow = X + static_cast<size_t>(yy + dyo) * W + (x0 + dxo);
                            const int len = x1 - x0;
                            for (int i = 0; i < len; ++i) {
                                xrow[i] += wv * drow[i];
                                acc += static_cast<double>(irow[i]) * drow[i];
                            }
                        }
                        gw_[wbase + ky * k_ + kx] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
    return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight",
                   {static_cast<uint32_t>(out_ch_), static_cast<uint32_t>(in_ch_),
                    static_cast<uint32_t>(k_), static_cast<uint32_t>(k_)},
                   w_.data(), gw_.data(), w_.size(), true});
    out.push_back({prefix + ".bias",
                   {static_cast<uint32_t>(out_ch_)},
                   b_.data(), gb_.data(), b_.size(), true});
}

// ---------------------------------------------------------------------------
// ConvTranspose2d (kernel 2, stride 2)
// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int in_ch, int out_ch)
    : in_ch_(in_ch), out_ch_(out_ch) {
    size_t wn = static_cast<size_t>(in_ch) * out_ch * 4;
    w_.assign(wn, 0.f);
    gw_.assign(wn, 0.f);
    b_.assign(out_ch, 0.f);
    gb_.assign(out_ch, 0.f);
}

void ConvTranspose2d::init(Rng& rng) {
    // With kernel == stride each output position sees one input tap per
    // channel, so fan-in is just in_ch.
    double std = std::sqrt(2.0 / static_cast<double>(in_ch_));
    for (float& v : w_) v = static_cast<float>(rng.normal() * std);
    std::fill(b_.begin(), b_.end(), 0.f);
}

Tensor ConvTranspose2d::forward(const Tensor& x, bool cache) {
    if (x.c != in_ch_) throw std::invalid_argument("upconv: channel mismatch");
    if (cache) x_ = x;
    const int H = x.h, W = x.w;
    Tensor y(x.n, out_ch_, H * 2, W * 2);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < out_ch_; ++co) {
            float* O = y.ptr(n, co);
            std::fill(O, O + y.plane(), b_[co]);
            for (int ci = 0; ci < in_ch_; ++ci) {
                const float* I = x.ptr(n, ci);
                const float* Wk = &w_[(static_cast<size_t>(ci) * out_ch_ + co) * 4];
                for (int a = 0; a < 2; ++a) {
                    for (int bo = 0; bo < 2; ++bo) {
                        const float wv = Wk[a * 2 + bo];
                        for (int yy = 0; yy < H; ++yy) {
                            const float* src = I + static_cast<size_t>(yy) * W;
                            float* dst = O + static_cast<size_t>(2 * yy + a) * (2 * W) + bo;
                            for (int xx = 0; xx < W; ++xx) dst[2 * xx] += wv * src[xx];
                        }
                    }
                }
            }
        }
    }
    return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy) {
    const Tensor& x = x_;
    if (x.n == 0) throw std::logic_error("upconv backward without cached forward");
    const int H = x.h, W = x.w;
    Tensor dx(x.n, in_ch_, H, W);
    for (int n = 0; n < x.n; ++n) {
        for (int co = 0; co < out_ch_; ++co) {
            const float* D = dy.ptr(n, co);
            double sum = 0.0;
            for (size_t i = 0; i < dy.plane(); ++i) sum += D[i];
            gb_[co] += static_cast<float>(sum);
            for (int ci = 0; ci < in_ch_; ++ci) {
                const float* I = x.ptr(n, ci);
                float* X = dx.ptr(n, ci);
                const size_t wbase = (static_cast<size_t>(ci) * out_ch_ + co) * 4;
                for (int a = 0; a < 2; ++a) {
                    for (int bo = 0; bo < 2; ++bo) {
                        const float wv = w_[wbase + a * 2 + bo];
                        double acc = 0.0;
                        for (int yy = 0; yy < H; ++yy) {
                            const float* drow = D + static_cast<size_t>(2 * yy + a) * (2 * W) + bo;
                            const float* irow = I + static_cast<size_t>(yy) * W;
                            float* xrow = X + static_cast<size_t>(yy) * W;
                            for (int xx = 0; xx < W; ++xx) {
                                const float d = drow[2 * xx];
                                xrow[xx] += wv * d;
                                acc += static_cast<double>(irow[xx]) * d;
                            }
                        }
                        gw_[wbase + a * 2 + bo] += static_cast<float>(acc);
                    }
                }
            }
        }
    }
    return dx;
}

void ConvTranspose2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight",
                   {static_cast<uint32_t>(in_ch_), static_cast<uint32_t>(out_ch_), 2, 2},
                   w_.data(), gw_.data(), w_.size(), true});
    out.push_back({prefix + ".bias",
                   {static_cast<uint32_t>(out_ch_)},
                   b_.data(), gb_.data(), b_.size(), true});
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(int channels) : channels_(channels) {
    gamma_.assign(channels, 1.f);
    beta_.assign(channels, 0.f);
    g_gamma_.assign(channels, 0.f);
    g_beta_.assign(channels, 0.f);
    running_mean_.assign(channels, 0.f);
    running_var_.assign(channels, 1.f);
}

void BatchNorm2d::init() {
    std::fill(gamma_.begin(), gamma_.end(), 1.f);
    std::fill(beta_.begin(), beta_.end(), 0.f);
    std::fill(running_mean_.begin(), running_mean_.end(), 0.f);
    std::fill(running_var_.begin(), running_var_.end(), 1.f);
}

Tensor BatchNorm2d::forward(const Tensor& x, Mode mode, bool cache) {
    if (x.c != channels_) throw std::invalid_argument("batchnorm: channel mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    const size_t plane = x.plane();
    if (mode == Mode::Eval) {
        for (int c = 0; c < channels_; ++c) {
            const float scale =
                gamma_[c] / std::sqrt(running_var_[c] + kEpsilon);
            const float shift = beta_[c] - running_mean_[c] * scale;
            for (int n = 0; n < x.n; ++n) {
                const float* I = x.ptr(n, c);
                float* O = y.ptr(n, c);
                for (size_t i = 0; i < plane; ++i) O[i] = I[i] * scale + shift;
            }
        }
        return y;
    }

    // Train mode: batch statistics over N*H*W per channel (population var).
    const double m = static_cast<double>(x.n) * plane;
    if (cache) {
        xhat_ = Tensor(x.n, x.c, x.h, x.w);
        inv_std_.assign(channels_, 0.f);
    }
    for (int c = 0; c < channels_; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* I = x.ptr(n, c);
            for (size_t i = 0; i < plane; ++i) sum += I[i];
        }
        const double mean = sum / m;
        double sq = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* I = x.ptr(n, c);
            for (size_t i = 0; i < plane; ++i) {
                const double d = I[i] - mean;
                sq += d * d;
            }
        }
        const double var = sq / m;
        const float inv = static_cast<float>(1.0 / std::sqrt(var + kEpsilon));
        const float fm = static_cast<float>(mean);
        for (int n = 0; n < x.n; ++n) {
            const float* I = x.ptr(n, c);
            float* O = y.ptr(n, c);
            float* XH = cache ? xhat_.ptr(n, c) : nullptr;
            for (size_t i = 0; i < plane; ++i) {
                const float xh = (I[i] - fm) * inv;
                if (XH) XH[i] = xh;
                O[i] = gamma_[c] * xh + beta_[c];
            }
        }
        if (cache) inv_std_[c] = inv;
        running_mean_[c] = (1.f - kMomentum) * running_mean_[c] + kMomentum * fm;
        running_var_[c] =
            (1.f - kMomentum) * running_var_[c] + kMomentum * static_cast<float>(var);
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    if (xhat_.n == 0) throw std::logic_error("batchnorm backward without cached forward");
    const size_t plane = dy.plane();
    const double m = static_cast<double>(dy.n) * plane;
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.n; ++n) {
            const float* D = dy.ptr(n, c);
            const float* XH = xhat_.ptr(n, c);
            for (size_t i = 0; i < plane; ++i) {
                sum_dy += D[i];
                sum_dy_xhat += static_cast<double>(D[i]) * XH[i];
            }
        }
        g_gamma_[c] += static_cast<float>(sum_dy_xhat);
        g_beta_[c] += static_cast<float>(sum_dy);
        // dx = gamma*inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
        const float scale = gamma_[c] * inv_std_[c];
        const float mean_dy = static_cast<float>(sum_dy / m);
        const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / m);
        for (int n = 0; n < dy.n; ++n) {
            const float* D = dy.ptr(n, c);
            const float* XH = xhat_.ptr(n, c);
            float* X = dx.ptr(n, c);
            for (size_t i = 0; i < plane; ++i)
                X[i] = scale * (D[i] - mean_dy - XH[i] * mean_dy_xhat);
        }
    }
    return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    uint32_t ch = static_cast<uint32_t>(channels_);
    out.push_back({prefix + ".gamma", {ch}, gamma_.data(), g_gamma_.data(), gamma_.size(), true});
    out.push_back({prefix + ".beta", {ch}, beta_.data(), g_beta_.data(), beta_.size(), true});
    out.push_back({prefix + ".running_mean", {ch}, running_mean_.data(), nullptr,
                   running_mean_.size(), false});
    out.push_back({prefix + ".running_var", {ch}, running_var_.data(), nullptr,
                   running_var_.size(), false});
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool cache) {
    Tensor y = x;
    for (float& v : y.data) v = v > 0.f ? v : 0.f;
    if (cache) y_ = y;
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    if (y_.n == 0) throw std::logic_error("relu backward without cached forward");
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i)
        if (y_.data[i] <= 0.f) dx.data[i] = 0.f;
    return dx;
}

Tensor MaxPool2x2::forward(const Tensor& x, bool cache) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw std::invalid_argument("maxpool: spatial size must be even");
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor y(x.n, x.c, oh, ow);
    if (cache) {
        argmax_.assign(static_cast<size_t>(x.n) * x.c * oh * ow, 0);
        in_h_ = x.h;
        in_w_ = x.w;
        n_ = x.n;
        c_ = x.c;
    }
    size_t k = 0;
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const float* I = x.ptr(n, c);
            float* O = y.ptr(n, c);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const uint32_t base = static_cast<uint32_t>(2 * oy * x.w + 2 * ox);
                    uint32_t best = base;
                    float bv = I[base];
                    const uint32_t cand[3] = {base + 1, base + static_cast<uint32_t>(x.w),
                                              base + static_cast<uint32_t>(x.w) + 1};
                    for (uint32_t idx : cand)
                        if (I[idx] > bv) {
                            bv = I[idx];
                            best = idx;
                        }
                    O[static_cast<size_t>(oy) * ow + ox] = bv;
                    if (cache) argmax_[k] = best;
                    ++k;
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2x2::backward(const Tensor& dy) {
    if (argmax_.empty()) throw std::logic_error("maxpool backward without cached forward");
    Tensor dx(n_, c_, in_h_, in_w_);
    const int oh = in_h_ / 2, ow = in_w_ / 2;
    size_t k = 0;
    for (int n = 0; n < n_; ++n) {
        for (int c = 0; c < c_; ++c) {
            const float* D = dy.ptr(n, c);
            float* X = dx.ptr(n, c);
            for (int i = 0; i < oh * ow; ++i) X[argmax_[k + i]] += D[i];
            k += static_cast<size_t>(oh) * ow;
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ConvBlock
// ---------------------------------------------------------------------------

ConvBlock::ConvBlock(int in_ch, int out_ch, int convs, bool batchnorm)
    : use_bn_(batchnorm) {
    for (int i = 0; i < convs; ++i) {
        convs_.emplace_back(i == 0 ? in_ch : out_ch, out_ch, 3);
        if (batchnorm) bns_.emplace_back(out_ch);
        relus_.emplace_back();
    }
}

Tensor ConvBlock::forward(const Tensor& x, Mode mode, bool cache) {
    Tensor cur = x;
    for (size_t i = 0; i < convs_.size(); ++i) {
        cur = convs_[i].forward(cur, cache);
        if (use_bn_) cur = bns_[i].forward(cur, mode, cache);
        cur = relus_[i].forward(cur, cache);
    }
    return cur;
}

Tensor ConvBlock::backward(const Tensor& dy) {
    Tensor g = dy;
    for (size_t i = convs_.size(); i-- > 0;) {
        g = relus_[i].backward(g);
        if (use_bn_) g = bns_[i].backward(g);
        g = convs_[i].backward(g);
    }
    return g;
}

void ConvBlock::collect(const std::string& prefix, std::vector<ParamRef>& out) {
    for (size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect(prefix + ".conv" + std::to_string(i), out);
        if (use_bn_) bns_[i].collect(prefix + ".bn" + std::to_string(i), out);
    }
}

void ConvBlock::init(Rng& rng) {
    for (size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].init(rng);
        if (use_bn_) bns_[i].init();
    }
}

// ---------------------------------------------------------------------------
// UNet
// ---------------------------------------------------------------------------

namespace {

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat: shape mismatch");
    Tensor y(a.n, a.c + b.c, a.h, a.w);
    for (int n = 0; n < a.n; ++n) {
        std::memcpy(y.ptr(n, 0), a.ptr(n, 0), sizeof(float) * a.c * a.plane());
        std::memcpy(y.ptr(n, a.c), b.ptr(n, 0), sizeof(float) * b.c * b.plane());
    }
    return y;
}

void split_channels(const Tensor& y, Tensor& a, Tensor& b, int ca) {
    a = Tensor(y.n, ca, y.h, y.w);
    b = Tensor(y.n, y.c - ca, y.h, y.w);
    for (int n = 0; n < y.n; ++n) {
        std::memcpy(a.ptr(n, 0), y.ptr(n, 0), sizeof(float) * ca * y.plane());
        std::memcpy(b.ptr(n, 0), y.ptr(n, ca), sizeof(float) * (y.c - ca) * y.plane());
    }
}

} // namespace

UNet::UNet(const ArchitectureSpec& spec)
    : spec_(spec),
      bottleneck_(spec.encoder_widths.back(), spec.bottleneck_width,
                  spec.convs_per_block, spec.use_batchnorm),
      head_(spec.encoder_widths.front(), spec.num_classes, 1) {
    const int depth = spec.depth();
    int prev = spec.in_channels;
    for (int d = 0; d < depth; ++d) {
        enc_.emplace_back(prev, spec.encoder_widths[d], spec.convs_per_block,
                          spec.use_batchnorm);
        pool_.emplace_back();
        prev = spec.encoder_widths[d];
    }
    up_.reserve(depth);
    dec_.reserve(depth);
    for (int d = 0; d < depth; ++d) {
        int from = d + 1 < depth ? spec.encoder_widths[d + 1] : spec.bottleneck_width;
        up_.emplace_back(from, spec.encoder_widths[d]);
        dec_.emplace_back(2 * spec.encoder_widths[d], spec.encoder_widths[d],
                          spec.convs_per_block, spec.use_batchnorm);
    }
}

UNet UNet::build(const ArchitectureSpec& spec, uint64_t init_seed) {
    spec.validate();
    UNet net(spec);
    Rng rng(init_seed);
    for (auto& b : net.enc_) b.init(rng);
    net.bottleneck_.init(rng);
    for (int d = spec.depth() - 1; d >= 0; --d) {
        net.up_[d].init(rng);
        net.dec_[d].init(rng);
    }
    net.head_.init(rng);
    return net;
}

Tensor UNet::forward(const Tensor& x, Mode mode) {
    const int depth = spec_.depth();
    if (x.c != spec_.in_channels)
        throw std::invalid_argument("forward: input channels do not match spec");
    const int div = 1 << depth;
    if (x.h % div != 0 || x.w % div != 0)
        throw std::invalid_argument("forward: H and W must be divisible by 2^depth");
    if (x.n < 1) throw std::invalid_argument("forward: empty batch");

    const bool cache = mode == Mode::Train;
    std::vector<Tensor> skips;
    skips.reserve(depth);
    Tensor cur = x;
    for (int d = 0; d < depth; ++d) {
        cur = enc_[d].forward(cur, mode, cache);
        skips.push_back(cur);
        cur = pool_[d].forward(cur, cache);
    }
    cur = bottleneck_.forward(cur, mode, cache);
    for (int d = depth - 1; d >= 0; --d) {
        cur = up_[d].forward(cur, cache);
        cur = concat_channels(cur, skips[d]);
        cur = dec_[d].forward(cur, mode, cache);
    }
    return head_.forward(cur, cache);
}

void UNet::backward(const Tensor& dlogits) {
    const int depth = spec_.depth();
    Tensor g = head_.backward(dlogits);
    std::vector<Tensor> skip_grads(depth);
    for (int d = 0; d < depth; ++d) {
        g = dec_[d].backward(g);
        Tensor g_up, g_skip;
        split_channels(g, g_up, g_skip, spec_.encoder_widths[d]);
        skip_grads[d] = std::move(g_skip);
        g = up_[d].backward(g_up);
    }
    g = bottleneck_.backward(g);
    for (int d = depth - 1; d >= 0; --d) {
        g = pool_[d].backward(g);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += skip_grads[d].data[i];
        g = enc_[d].backward(g);
    }
}

std::vector<ParamRef> UNet::params() {
    std::vector<ParamRef> out;
    const int depth = spec_.depth();
    for (int d = 0; d < depth; ++d) enc_[d].collect("enc" + std::to_string(d), out);
    bottleneck_.collect("bottleneck", out);
    for (int d = depth - 1; d >= 0; --d) {
        up_[d].collect("dec" + std::to_string(d) + ".up", out);
        dec_[d].collect("dec" + std::to_string(d), out);
    }
    head_.collect("head", out);
    return out;
}

void UNet::zero_grad() {
    for (auto& p : params())
        if (p.grads) std::fill(p.grads, p.grads + p.count, 0.f);
}

ModelWeights UNet::export_weights() {
    ModelWeights w;
    w.spec_hash = spec_.hash();
    for (const auto& p : params()) {
        NamedTensor t;
        t.name = p.name;
        t.shape = p.shape;
        t.values.assign(p.values, p.values + p.count);
        w.tensors.push_back(std::move(t));
    }
    return w;
}

void UNet::import_weights(const ModelWeights& weights) {
    if (weights.spec_hash != spec_.hash())
        throw FormatError(FormatIssue::HashMismatch,
                          "weights were produced by a different architecture spec");
    auto refs = params();
    if (weights.tensors.size() != refs.size())
        throw FormatError(FormatIssue::DimensionMismatch,
                          "weights tensor count mismatch");
    std::map<std::string, ParamRef*> by_name;
    for (auto& r : refs) by_name[r.name] = &r;
    for (const auto& t : weights.tensors) {
        auto it = by_name.find(t.name);
        if (it == by_name.end())
            throw FormatError(FormatIssue::BadField, "unknown tensor " + t.name);
        ParamRef* r = it->second;
        if (t.shape != r->shape || t.values.size() != r->count)
            throw FormatError(FormatIssue::DimensionMismatch,
                              "tensor " + t.name + " shape mismatch");
        std::copy(t.values.begin(), t.values.end(), r->values);
    }
}

void UNet::save(const std::filesystem::path& path) {
    save_weights(export_weights(), path);
}

UNet UNet::load(const std::filesystem::path& path, const ArchitectureSpec& spec) {
    UNet net = build(spec);
    net.import_weights(load_weights_file(path));
    return net;
}

// ---------------------------------------------------------------------------
// CWGT container
// ---------------------------------------------------------------------------

namespace {
constexpr char kWeightsMagic[4] = {'C', 'W', 'G', 'T'};
constexpr uint16_t kWeightsVersion = 1;
} // namespace

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    io::write_bytes(os, kWeightsMagic, 4);
    io::write_u16(os, kWeightsVersion);
    io::write_bytes(os, weights.spec_hash.data(), 32);
    io::write_u32(os, static_cast<uint32_t>(weights.tensors.size()));
    for (const auto& t : weights.tensors) {
        io::write_u16(os, static_cast<uint16_t>(t.name.size()));
        io::write_bytes(os, t.name.data(), t.name.size());
        io::write_u8(os, static_cast<uint8_t>(t.shape.size()));
        size_t count = 1;
        for (uint32_t d : t.shape) {
            io::write_u32(os, d);
            count *= d;
        }
        if (count != t.values.size())
            throw DataError("tensor " + t.name + " shape/value size mismatch");
        io::write_f32_array(os, t.values);
    }
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

ModelWeights load_weights_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    char magic[4];
    io::read_bytes(is, magic, 4, "weights header");
    if (std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw FormatError(FormatIssue::BadMagic, "bad magic bytes in weights file");
    uint16_t version = io::read_u16(is, "version");
    if (version != kWeightsVersion)
        throw FormatError(FormatIssue::BadVersion, "unsupported weights version");
    ModelWeights w;
    io::read_bytes(is, w.spec_hash.data(), 32, "spec hash");
    uint32_t count = io::read_u32(is, "tensor count");
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        uint16_t name_len = io::read_u16(is, "tensor name length");
        t.name.resize(name_len);
        io::read_bytes(is, t.name.data(), name_len, "tensor name");
        uint8_t rank = io::read_u8(is, "tensor rank");
        size_t n = 1;
        for (uint8_t r = 0; r < rank; ++r) {
            uint32_t d = io::read_u32(is, "tensor dim");
            t.shape.push_back(d);
            n *= d;
        }
        t.values.resize(n);
        io::read_f32_array(is, t.values, "tensor data");
        w.tensors.push_back(std::move(t));
    }
    if (is.peek() != EOF)
        throw FormatError(FormatIssue::DimensionMismatch,
                          "weights payload longer than header implies");
    return w;
}

} // namespace cloudkd
