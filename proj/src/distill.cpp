#include "cloudkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cloudkd {

// ---------------------------------------------------------------------------
// tempered softmax
// ---------------------------------------------------------------------------

void tempered_softmax(std::span<const double> logits, double tau,
                      std::span<double> out) {
    if (tau <= 0.0) throw std::invalid_argument("tempered_softmax: tau must be positive");
    if (logits.empty() || out.size() != logits.size())
        throw std::invalid_argument("tempered_softmax: bad spans");
    double mx = logits[0] / tau;
    for (double z : logits) mx = std::max(mx, z / tau);
    double denom = 0.0;
    for (size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] / tau - mx);
        denom += out[k];
    }
    for (double& p : out) p /= denom;
}

std::vector<double> tempered_softmax(std::span<const double> logits, double tau) {
    std::vector<double> out(logits.size());
    tempered_softmax(logits, tau, out);
    return out;
}

// ---------------------------------------------------------------------------
// kd_loss
// ---------------------------------------------------------------------------

void KdOptions::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0))
        throw std::invalid_argument("kd_loss: alpha must be in (0,1]");
    if (!(tau >= 1.0)) throw std::invalid_argument("kd_loss: tau must be >= 1");
}

KdLossTerms kd_loss(std::span<const float> student_logits,
                    std::span<const float> teacher_logits,
                    std::span<const uint8_t> labels, int num_classes,
                    const KdOptions& opt, std::span<double> grad) {
    opt.validate();
    const size_t K = static_cast<size_t>(num_classes);
    const size_t P = labels.size();
    if (student_logits.size() != P * K)
        throw std::invalid_argument("kd_loss: student logits shape mismatch");
    const bool use_teacher = opt.alpha < 1.0;
    if (use_teacher && teacher_logits.size() != P * K)
        throw std::invalid_argument("kd_loss: teacher logits shape mismatch");
    if (!grad.empty() && grad.size() != P * K)
        throw std::invalid_argument("kd_loss: grad span shape mismatch");

    bool ignore_lut[256] = {};
    for (uint8_t id : opt.ignore_class_ids) ignore_lut[id] = true;

    size_t count = 0;
    for (size_t p = 0; p < P; ++p)
        if (!ignore_lut[labels[p]]) ++count;
    if (count == 0) throw DataError("kd_loss: all pixels ignored");

    const double soft_scale =
        (1.0 - opt.alpha) * (opt.scale_distill_by_tau_squared ? opt.tau * opt.tau : 1.0);
    const double inv_count = 1.0 / static_cast<double>(count);

    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);

    double hard_sum = 0.0, soft_sum = 0.0;
    std::vector<double> p1(K), pt(K), pst(K), zbuf(K);
    for (size_t p = 0; p < P; ++p) {
        const uint8_t y = labels[p];
        if (ignore_lut[y]) continue;
        if (y >= K) throw std::invalid_argument("kd_loss: label out of range");
        const float* zs = student_logits.data() + p * K;

        // Hard term at tau0 = 1: -log softmax(z_s)[y].
        double mx = zs[0];
        for (size_t k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(zs[k]));
        double denom = 0.0;
        for (size_t k = 0; k < K; ++k) {
            p1[k] = std::exp(zs[k] - mx);
            denom += p1[k];
        }
        const double log_denom = std::log(denom);
        hard_sum += -(zs[y] - mx - log_denom);
        for (size_t k = 0; k < K; ++k) p1[k] /= denom;

        double soft_p = 0.0;
        if (use_teacher) {
            const float* zt = teacher_logits.data() + p * K;
            for (size_t k = 0; k < K; ++k) zbuf[k] = zt[k];
            tempered_softmax(zbuf, opt.tau, pt);
            // log softmax(z_s / tau) computed directly for accuracy.
            double mxs = zs[0] / opt.tau;
            for (size_t k = 1; k < K; ++k) mxs = std::max(mxs, zs[k] / opt.tau);
            double ds = 0.0;
            for (size_t k = 0; k < K; ++k) {
                pst[k] = std::exp(zs[k] / opt.tau - mxs);
                ds += pst[k];
            }
            const double log_ds = std::log(ds);
            for (size_t k = 0; k < K; ++k) {
                soft_p += -pt[k] * (zs[k] / opt.tau - mxs - log_ds);
                pst[k] /= ds;
            }
            soft_sum += soft_p;
        }

        if (!grad.empty()) {
            double* g = grad.data() + p * K;
            for (size_t k = 0; k < K; ++k) {
                double v = opt.alpha * (p1[k] - (k == y ? 1.0 : 0.0));
                if (use_teacher) v += soft_scale * (pst[k] - pt[k]) / opt.tau;
                g[k] = v * inv_count;
            }
        }
    }

    KdLossTerms terms;
    terms.pixels = count;
    terms.hard = opt.alpha * hard_sum * inv_count;
    terms.distill = use_teacher ? soft_scale * soft_sum * inv_count : 0.0;
    terms.total = terms.hard + terms.distill;
    return terms;
}

KdLossTerms kd_loss_batch(const Tensor& student_logits, const Tensor* teacher_logits,
                          const std::vector<uint8_t>& labels, const KdOptions& opt,
                          Tensor* dlogits) {
    const int K = student_logits.c;
    const size_t plane = student_logits.plane();
    const size_t P = static_cast<size_t>(student_logits.n) * plane;
    if (labels.size() != P)
        throw std::invalid_argument("kd_loss_batch: label count mismatch");
    const bool use_teacher = teacher_logits != nullptr && opt.alpha < 1.0;
    if (use_teacher && (teacher_logits->size() != student_logits.size() ||
                        teacher_logits->c != K))
        throw std::invalid_argument("kd_loss_batch: teacher logits shape mismatch");

    // Re-pack NCHW into pixel-major rows once; K is small.
    std::vector<float> zs(P * K), zt(use_teacher ? P * K : 0);
    for (int n = 0; n < student_logits.n; ++n)
        for (int k = 0; k < K; ++k) {
            const float* src = student_logits.ptr(n, k);
            for (size_t i = 0; i < plane; ++i)
                zs[(n * plane + i) * K + k] = src[i];
        }
    if (use_teacher)
        for (int n = 0; n < teacher_logits->n; ++n)
            for (int k = 0; k < K; ++k) {
                const float* src = teacher_logits->ptr(n, k);
                for (size_t i = 0; i < plane; ++i)
                    zt[(n * plane + i) * K + k] = src[i];
            }

    KdOptions effective = opt;
    if (teacher_logits == nullptr) effective.alpha = 1.0;

    std::vector<double> grad;
    if (dlogits) grad.resize(P * K);
    KdLossTerms terms = kd_loss(zs, zt, labels, K, effective,
                                dlogits ? std::span<double>(grad) : std::span<double>());
    if (dlogits) {
        *dlogits = Tensor(student_logits.n, K, student_logits.h, student_logits.w);
        for (int n = 0; n < student_logits.n; ++n)
            for (int k = 0; k < K; ++k) {
                float* dst = dlogits->ptr(n, k);
                for (size_t i = 0; i < plane; ++i)
                    dst[i] = static_cast<float>(grad[(n * plane + i) * K + k]);
            }
    }
    return terms;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

namespace {

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(std::vector<ParamRef>& params, double lr) = 0;
};

class Adam : public Optimizer {
public:
    void step(std::vector<ParamRef>& params, double lr) override {
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.trainable ? p.count : 0, 0.f);
                v_.emplace_back(p.trainable ? p.count : 0, 0.f);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, t_);
        const double bc2 = 1.0 - std::pow(kBeta2, t_);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable) continue;
            float* m = m_[pi].data();
            float* v = v_[pi].data();
            for (size_t i = 0; i < p.count; ++i) {
                const double g = p.grads[i];
                const double mn = kBeta1 * m[i] + (1.0 - kBeta1) * g;
                const double vn = kBeta2 * v[i] + (1.0 - kBeta2) * g * g;
                m[i] = static_cast<float>(mn);
                v[i] = static_cast<float>(vn);
                p.values[i] -= static_cast<float>(lr * (mn / bc1) /
                                                  (std::sqrt(vn / bc2) + kEps));
            }
        }
    }

private:
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::vector<std::vector<float>> m_, v_;
    int t_ = 0;
};

class SgdMomentum : public Optimizer {
public:
    void step(std::vector<ParamRef>& params, double lr) override {
        if (vel_.empty())
            for (const auto& p : params)
                vel_.emplace_back(p.trainable ? p.count : 0, 0.f);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi];
            if (!p.trainable) continue;
            float* v = vel_[pi].data();
            for (size_t i = 0; i < p.count; ++i) {
                v[i] = static_cast<float>(kMomentum * v[i] + p.grads[i]);
                p.values[i] -= static_cast<float>(lr * v[i]);
            }
        }
    }

private:
    static constexpr double kMomentum = 0.9;
    std::vector<std::vector<float>> vel_;
};

} // namespace

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

void DistillConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("distill: alpha must be in (0,1]");
    if (!(tau >= 1.0)) throw ConfigError("distill: tau must be >= 1");
    if (epochs < 1) throw ConfigError("distill: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("distill: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("distill: learning rate must be positive");
}

MaskRaster argmax_mask(const PlaneMap& logits, MaskScheme scheme) {
    MaskRaster mask;
    mask.height = logits.height;
    mask.width = logits.width;
    mask.scheme = scheme;
    mask.classes = static_cast<uint8_t>(class_count(scheme));
    mask.data.resize(mask.size());
    const size_t plane = static_cast<size_t>(logits.height) * logits.width;
    for (size_t i = 0; i < plane; ++i) {
        uint8_t best = 0;
        float bv = logits.data[i];
        for (uint32_t k = 1; k < logits.channels; ++k) {
            const float v = logits.data[k * plane + i];
            if (v > bv) {
                bv = v;
                best = static_cast<uint8_t>(k);
            }
        }
        mask.data[i] = best;
    }
    return mask;
}

namespace {

MaskRaster mask_from_labels(const std::vector<uint8_t>& labels, int h, int w,
                            MaskScheme scheme) {
    MaskRaster m;
    m.height = static_cast<uint32_t>(h);
    m.width = static_cast<uint32_t>(w);
    m.scheme = scheme;
    m.classes = static_cast<uint8_t>(class_count(scheme));
    m.data = labels;
    return m;
}

PlaneMap plane_map_from_logits(const Tensor& logits, int n) {
    PlaneMap pm;
    pm.channels = static_cast<uint32_t>(logits.c);
    pm.height = static_cast<uint32_t>(logits.h);
    pm.width = static_cast<uint32_t>(logits.w);
    pm.data.assign(logits.ptr(n, 0), logits.ptr(n, 0) + logits.plane() * logits.c);
    return pm;
}

} // namespace

double evaluate_dataset_ji(UNet& model, const SegDataset& ds) {
    if (ds.empty()) throw DataError("evaluate_dataset_ji: empty dataset");
    const auto classes = evaluated_classes(ds.scheme);
    const auto ignore = ignore_classes(ds.scheme);
    std::vector<ConfusionMatrix> pooled(classes.size());
    for (const auto& s : ds.samples) {
        Tensor logits = model.forward(s.input, Mode::Eval);
        MaskRaster pred = argmax_mask(plane_map_from_logits(logits, 0), ds.scheme);
        MaskRaster gt = mask_from_labels(s.labels, logits.h, logits.w, ds.scheme);
        for (size_t c = 0; c < classes.size(); ++c)
            pooled[c] += confusion(pred, gt, classes[c], ignore);
    }
    double sum = 0.0;
    for (const auto& cm : pooled) sum += metrics_from_confusion(cm).ji.value;
    return sum / static_cast<double>(classes.size());
}

void save_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "epoch,total_loss,hard_term,distill_term,val_ji\n";
    for (size_t e = 0; e < history.epochs.size(); ++e) {
        const auto& s = history.epochs[e];
        os << (e + 1) << ',' << format_double(s.total_loss) << ','
           << format_double(s.hard_term) << ',' << format_double(s.distill_term)
           << ',' << format_double(s.val_ji) << '\n';
    }
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

TrainResult train(UNet& student, const SegDataset& train_set, const SegDataset* val_set,
                  const TeacherBackend* teacher, const DistillConfig& cfg) {
    cfg.validate();
    if (train_set.empty()) throw DataError("train: empty dataset");
    if (teacher && teacher->num_classes() != student.spec().num_classes)
        throw DataError("train: teacher class count does not match student");

    KdOptions loss_opt;
    loss_opt.alpha = teacher ? cfg.alpha : 1.0; // no teacher -> supervised baseline
    loss_opt.tau = cfg.tau;
    loss_opt.scale_distill_by_tau_squared = cfg.scale_distill_by_tau_squared;
    loss_opt.ignore_class_ids = cfg.ignore_class_ids;
    const bool need_teacher = teacher != nullptr && loss_opt.alpha < 1.0;

    std::unique_ptr<Optimizer> opt;
    if (cfg.optimizer == OptimizerKind::Adam)
        opt = std::make_unique<Adam>();
    else
        opt = std::make_unique<SgdMomentum>();

    auto params = student.params();
    const size_t n_samples = train_set.samples.size();
    const size_t steps_per_epoch =
        (n_samples + cfg.batch_size - 1) / static_cast<size_t>(cfg.batch_size);
    const size_t total_steps = steps_per_epoch * static_cast<size_t>(cfg.epochs);

    TrainResult result;
    result.best_val_ji = -1.0;
    size_t global_step = 0;

    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < n_samples; ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle:" + std::to_string(epoch)));
        shuffle_rng.shuffle(order);

        double sum_total = 0.0, sum_hard = 0.0, sum_distill = 0.0;
        size_t sum_pixels = 0;

        for (size_t start = 0; start < n_samples; start += cfg.batch_size) {
            const size_t bsz = std::min<size_t>(cfg.batch_size, n_samples - start);
            const auto& first = train_set.samples[order[start]];
            Tensor x(static_cast<int>(bsz), first.input.c, first.input.h, first.input.w);
            std::vector<uint8_t> labels(bsz * first.input.plane());
            Tensor zt;
            if (need_teacher)
                zt = Tensor(static_cast<int>(bsz), student.spec().num_classes,
                            first.input.h, first.input.w);
            for (size_t b = 0; b < bsz; ++b) {
                const auto& s = train_set.samples[order[start + b]];
                if (s.input.h != first.input.h || s.input.w != first.input.w)
                    throw DataError("train: samples disagree on patch size");
                std::copy(s.input.data.begin(), s.input.data.end(),
                          x.data.begin() + b * s.input.size());
                std::copy(s.labels.begin(), s.labels.end(),
                          labels.begin() + b * s.input.plane());
                if (need_teacher) {
                    Tensor t = teacher->logits(s);
                    if (t.c != zt.c || t.h != zt.h || t.w != zt.w)
                        throw DataError("train: teacher logits shape mismatch for " + s.id);
                    std::copy(t.data.begin(), t.data.end(),
                              zt.data.begin() + b * t.size());
                }
            }

            Tensor logits = student.forward(x, Mode::Train);
            Tensor dlogits;
            KdLossTerms terms = kd_loss_batch(logits, need_teacher ? &zt : nullptr,
                                              labels, loss_opt, &dlogits);
            if (!std::isfinite(terms.total))
                throw DivergenceError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch + 1) + ", step " +
                                      std::to_string(global_step + 1));

            student.zero_grad();
            student.backward(dlogits);

            double lr = cfg.learning_rate;
            if (cfg.cosine_decay)
                lr *= 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(global_step) /
                                            static_cast<double>(total_steps)));
            opt->step(params, lr);
            ++global_step;

            sum_total += terms.total * terms.pixels;
            sum_hard += terms.hard * terms.pixels;
            sum_distill += terms.distill * terms.pixels;
            sum_pixels += terms.pixels;
        }

        EpochStats stats;
        stats.total_loss = sum_total / static_cast<double>(sum_pixels);
        stats.hard_term = sum_hard / static_cast<double>(sum_pixels);
        stats.distill_term = sum_distill / static_cast<double>(sum_pixels);
        stats.val_ji = evaluate_dataset_ji(student, val_set ? *val_set : train_set);
        result.history.epochs.push_back(stats);

        if (stats.val_ji > result.best_val_ji) {
            result.best_val_ji = stats.val_ji;
            result.best_weights = student.export_weights();
        }
    }
    return result;
}

} // namespace cloudkd
