#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "cloudkd/dataset.hpp"
#include "cloudkd/unet.hpp"

namespace cloudkd {

// Source of teacher soft responses z_t. Backends are read-only after
// construction; concurrent lookups are safe.
class TeacherBackend {
public:
    virtual ~TeacherBackend() = default;
    virtual int num_classes() const = 0;
    // K x H x W logit map (as a 1xKxHxW tensor) for one normalized patch.
    virtual Tensor logits(const SegSample& sample) const = 0;
};

// Directory of per-patch CBSK logit containers (band IDs LGT0..LGTk) plus a
// manifest.txt listing patch IDs one per line. All logits are loaded up
// front so lookups stay immutable.
class PrecomputedTeacher : public TeacherBackend {
public:
    explicit PrecomputedTeacher(const std::filesystem::path& dir);

    int num_classes() const override { return num_classes_; }
    Tensor logits(const SegSample& sample) const override;

    size_t patch_count() const { return logits_.size(); }

private:
    int num_classes_ = 0;
    std::map<std::string, Tensor> logits_;
};

// Wraps a built model; responses are eval-mode forward passes (frozen, no
// gradient flows to the teacher).
class LiveTeacher : public TeacherBackend {
public:
    explicit LiveTeacher(UNet model);

    int num_classes() const override { return model_.spec().num_classes; }
    Tensor logits(const SegSample& sample) const override;

private:
    mutable UNet model_; // eval forward has no observable side effects
};

// Fuses >= 1 members. Default fusion is the element-wise arithmetic mean of
// logits (before any tempered softmax); probability-space averaging is the
// opt-in alternative.
class EnsembleTeacher : public TeacherBackend {
public:
    explicit EnsembleTeacher(std::vector<std::unique_ptr<TeacherBackend>> members,
                             bool fuse_in_prob_space = false);

    int num_classes() const override { return members_.front()->num_classes(); }
    Tensor logits(const SegSample& sample) const override;

    size_t size() const { return members_.size(); }

private:
    std::vector<std::unique_ptr<TeacherBackend>> members_;
    bool fuse_in_prob_space_;
};

// Convenience wrappers matching the operation surface.
inline Tensor teacher_logits(const TeacherBackend& backend, const SegSample& patch) {
    return backend.logits(patch);
}
inline Tensor ensemble_logits(const EnsembleTeacher& ensemble, const SegSample& patch) {
    return ensemble.logits(patch);
}

// Writes one CBSK logit container (band IDs LGT0..LGTk) for a patch.
void save_logit_map(const Tensor& logits, const std::filesystem::path& path);
Tensor load_logit_map(const std::filesystem::path& path);

} // namespace cloudkd
