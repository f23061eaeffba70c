#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cloudkd/dataset.hpp"
#include "cloudkd/distill.hpp"
#include "cloudkd/raster.hpp"
#include "cloudkd/unet.hpp"

namespace cloudkd {

// ---------------------------------------------------------------------------
// Run configuration: flat UTF-8 `key = value` lines with dotted keys,
// '#' comments. Unknown keys are rejected.
// ---------------------------------------------------------------------------

struct RunConfig {
    MaskScheme scheme = MaskScheme::BinaryCloud;
    std::filesystem::path out = "runs/default";
    std::filesystem::path data_root; // defaults to <out>/data
    uint64_t seed = 7;

    uint32_t patch_size = 64;
    uint32_t stride = 64;

    ArchitectureSpec student;
    ArchitectureSpec teacher;

    // teacher supervised training (alpha = 1)
    DistillConfig teacher_train;
    // student distillation
    DistillConfig distill;

    enum class TeacherBackendKind { Precomputed, Live };
    TeacherBackendKind teacher_backend = TeacherBackendKind::Precomputed;
    bool teacher_fuse_probs = false;

    bool postproc_enabled = false;
    bool postproc_multiclass = false; // apply to binarized cloud map for kz-six

    int synthetic_train = 16;
    int synthetic_test = 8;

    static RunConfig defaults();
    static RunConfig parse(const std::string& text); // ConfigError on bad input
    static RunConfig load(const std::filesystem::path& path);

    void validate() const;
    std::filesystem::path data_dir() const { return data_root.empty() ? out / "data" : data_root; }
};

// ---------------------------------------------------------------------------
// Synthetic dataset: soft-edged Gaussian cloud blobs over a textured
// multispectral background, fully determined by the seed.
// ---------------------------------------------------------------------------

void generate_synthetic_pair(uint64_t sample_seed, uint32_t patch, BandStack& stack,
                             MaskRaster& mask);

// ---------------------------------------------------------------------------
// Dataset directory access. A split directory holds <id>.cbsk/<id>.cmsk
// pairs plus manifest.txt; norm_stats.txt sits at the dataset root.
// ---------------------------------------------------------------------------

std::vector<std::string> read_manifest(const std::filesystem::path& dir);
void write_manifest(const std::vector<std::string>& ids,
                    const std::filesystem::path& dir);

// Loads a split, normalizes with stats, and tiles every scene down to
// patch x patch samples (ids of tiled scenes carry a #row_col suffix).
SegDataset load_seg_dataset(const std::filesystem::path& split_dir,
                            const NormStats& stats, MaskScheme scheme,
                            uint32_t patch, uint32_t stride, bool require_masks);

// ---------------------------------------------------------------------------
// Pipeline commands. Each returns the primary artifact path(s) it wrote.
// ---------------------------------------------------------------------------

struct PrepareOptions {
    bool synthetic = false;
    std::filesystem::path raw_dir; // used when synthetic == false
};

std::filesystem::path cmd_prepare(const RunConfig& cfg, const PrepareOptions& opts);
std::filesystem::path cmd_train_teacher(const RunConfig& cfg);
std::filesystem::path cmd_export_logits(const RunConfig& cfg);
std::filesystem::path cmd_distill(const RunConfig& cfg);
std::filesystem::path cmd_predict(const RunConfig& cfg,
                                  const std::filesystem::path& input_split,
                                  const std::filesystem::path& weights);
struct EvaluateResult {
    std::filesystem::path per_scene_csv;
    std::filesystem::path aggregate_csv;
    std::filesystem::path pooled_csv;
};
EvaluateResult cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& pred_dir,
                            const std::filesystem::path& gt_dir);
std::filesystem::path cmd_benchmark(const RunConfig& cfg,
                                    const std::filesystem::path& weights,
                                    const std::filesystem::path& data_split);

// Applies the adaptive rule to a predicted mask; for kz-six the rule runs on
// the binarized cloud-vs-rest map and demoted pixels fall back to the best
// non-cloud class of `logits`.
MaskRaster postprocess_prediction(const MaskRaster& pred, const PlaneMap& logits,
                                  bool multiclass_enabled);

} // namespace cloudkd
