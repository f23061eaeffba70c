#pragma once

#include <optional>
#include <span>

#include "cloudkd/dataset.hpp"
#include "cloudkd/metrics.hpp"
#include "cloudkd/teacher.hpp"
#include "cloudkd/unet.hpp"

namespace cloudkd {

// ---------------------------------------------------------------------------
// Tempered softmax: softmax(z / tau) with max-subtraction for stability.
// ---------------------------------------------------------------------------

void tempered_softmax(std::span<const double> logits, double tau,
                      std::span<double> out);
std::vector<double> tempered_softmax(std::span<const double> logits, double tau);

// ---------------------------------------------------------------------------
// The distillation loss
//   L = alpha * CE(y, softmax(z_s, tau0=1))
//     + (1 - alpha) * [tau^2] * CE(softmax(z_t, tau), softmax(z_s, tau))
// averaged over non-ignored pixels. With alpha == 1 the teacher term is
// skipped entirely, so the result is bit-for-bit independent of z_t.
// ---------------------------------------------------------------------------

struct KdOptions {
    double alpha = 0.5;
    double tau = 2.0;
    bool scale_distill_by_tau_squared = true;
    std::vector<uint8_t> ignore_class_ids;

    void validate() const; // alpha in (0,1], tau >= 1
};

struct KdLossTerms {
    double total = 0.0;
    double hard = 0.0;    // alpha-weighted hard-label contribution
    double distill = 0.0; // (1-alpha)[tau^2]-weighted teacher contribution
    size_t pixels = 0;    // non-ignored pixels in the mean
};

// Flat per-pixel form: logits are P x K row-major, labels P entries.
// teacher_logits may be empty only when alpha == 1. grad, when non-empty,
// receives d(total)/d(student_logits), size P x K.
KdLossTerms kd_loss(std::span<const float> student_logits,
                    std::span<const float> teacher_logits,
                    std::span<const uint8_t> labels, int num_classes,
                    const KdOptions& opt, std::span<double> grad = {});

// NCHW batch form used by the trainer; fills dlogits (same shape as
// student_logits) when provided.
KdLossTerms kd_loss_batch(const Tensor& student_logits, const Tensor* teacher_logits,
                          const std::vector<uint8_t>& labels, const KdOptions& opt,
                          Tensor* dlogits);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class OptimizerKind { Adam, Sgd };

struct DistillConfig {
    double alpha = 0.5;
    double tau = 2.0;
    bool scale_distill_by_tau_squared = true;
    int epochs = 40;
    int batch_size = 4;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    bool cosine_decay = true;
    uint64_t seed = 7;
    std::vector<uint8_t> ignore_class_ids;

    void validate() const;
};

struct EpochStats {
    double total_loss = 0.0;
    double hard_term = 0.0;
    double distill_term = 0.0;
    double val_ji = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// CSV columns: epoch,total_loss,hard_term,distill_term,val_ji
void save_history_csv(const TrainHistory& history, const std::filesystem::path& path);

struct TrainResult {
    ModelWeights best_weights; // best validation JI (ties keep the earliest)
    TrainHistory history;
    double best_val_ji = 0.0;
};

// Mini-batch gradient descent on kd_loss. With no teacher, alpha is forced
// to 1 (plain supervised baseline). val_set == nullptr falls back to the
// training split for the per-epoch JI and best-weights selection. A
// non-finite loss aborts with DivergenceError.
TrainResult train(UNet& student, const SegDataset& train_set, const SegDataset* val_set,
                  const TeacherBackend* teacher, const DistillConfig& cfg);

// Pooled Jaccard of eval-mode predictions over a dataset, averaged across the
// scheme's evaluated classes.
double evaluate_dataset_ji(UNet& model, const SegDataset& ds);

// argmax over logit channels -> class-ID mask.
MaskRaster argmax_mask(const PlaneMap& logits, MaskScheme scheme);

} // namespace cloudkd
