#include "cloudkd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <set>
#include <sstream>

#include "cloudkd/morphology.hpp"
#include "cloudkd/teacher.hpp"

namespace fs = std::filesystem;

namespace cloudkd {

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + v + "'");
}

long parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double parse_float(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    if (out.empty()) throw ConfigError("config: empty list for " + key);
    return out;
}

OptimizerKind parse_optimizer(const std::string& key, const std::string& v) {
    if (v == "adam") return OptimizerKind::Adam;
    if (v == "sgd") return OptimizerKind::Sgd;
    throw ConfigError("config: unknown optimizer for " + key + ": '" + v + "'");
}

} // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.student = ArchitectureSpec::reference_student();
    cfg.teacher = ArchitectureSpec::reference_teacher();
    cfg.teacher_train.alpha = 1.0;
    cfg.teacher_train.epochs = 40;
    cfg.distill.epochs = 40;
    return cfg;
}

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg = defaults();
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));

        if (key == "scheme") {
            if (value == "binary-cloud")
                cfg.scheme = MaskScheme::BinaryCloud;
            else if (value == "kz-six")
                cfg.scheme = MaskScheme::KzSix;
            else
                throw ConfigError("config: unknown scheme '" + value + "'");
        } else if (key == "out") {
            cfg.out = value;
        } else if (key == "data.root") {
            cfg.data_root = value;
        } else if (key == "seed") {
            cfg.seed = static_cast<uint64_t>(parse_int(key, value));
        } else if (key == "tile.patch") {
            cfg.patch_size = static_cast<uint32_t>(parse_int(key, value));
        } else if (key == "tile.stride") {
            cfg.stride = static_cast<uint32_t>(parse_int(key, value));
        } else if (key == "student.widths") {
            cfg.student.encoder_widths = parse_int_list(key, value);
        } else if (key == "student.bottleneck") {
            cfg.student.bottleneck_width = static_cast<int>(parse_int(key, value));
        } else if (key == "student.convs_per_block") {
            cfg.student.convs_per_block = static_cast<int>(parse_int(key, value));
        } else if (key == "student.batchnorm") {
            cfg.student.use_batchnorm = parse_bool(key, value);
        } else if (key == "teacher.widths") {
            cfg.teacher.encoder_widths = parse_int_list(key, value);
        } else if (key == "teacher.bottleneck") {
            cfg.teacher.bottleneck_width = static_cast<int>(parse_int(key, value));
        } else if (key == "teacher.convs_per_block") {
            cfg.teacher.convs_per_block = static_cast<int>(parse_int(key, value));
        } else if (key == "teacher.batchnorm") {
            cfg.teacher.use_batchnorm = parse_bool(key, value);
        } else if (key == "teacher.epochs") {
            cfg.teacher_train.epochs = static_cast<int>(parse_int(key, value));
        } else if (key == "teacher.batch_size") {
            cfg.teacher_train.batch_size = static_cast<int>(parse_int(key, value));
        } else if (key == "teacher.lr") {
            cfg.teacher_train.learning_rate = parse_float(key, value);
        } else if (key == "teacher.optimizer") {
            cfg.teacher_train.optimizer = parse_optimizer(key, value);
        } else if (key == "teacher.backend") {
            if (value == "precomputed")
                cfg.teacher_backend = TeacherBackendKind::Precomputed;
            else if (value == "live")
                cfg.teacher_backend = TeacherBackendKind::Live;
            else
                throw ConfigError("config: unknown teacher backend '" + value + "'");
        } else if (key == "teacher.fuse_probs") {
            cfg.teacher_fuse_probs = parse_bool(key, value);
        } else if (key == "distill.alpha") {
            cfg.distill.alpha = parse_float(key, value);
        } else if (key == "distill.tau") {
            cfg.distill.tau = parse_float(key, value);
        } else if (key == "distill.tau_squared") {
            cfg.distill.scale_distill_by_tau_squared = parse_bool(key, value);
        } else if (key == "distill.epochs") {
            cfg.distill.epochs = static_cast<int>(parse_int(key, value));
        } else if (key == "distill.batch_size") {
            cfg.distill.batch_size = static_cast<int>(parse_int(key, value));
        } else if (key == "distill.lr") {
            cfg.distill.learning_rate = parse_float(key, value);
        } else if (key == "distill.optimizer") {
            cfg.distill.optimizer = parse_optimizer(key, value);
        } else if (key == "distill.cosine_decay") {
            cfg.distill.cosine_decay = parse_bool(key, value);
        } else if (key == "postproc.enabled") {
            cfg.postproc_enabled = parse_bool(key, value);
        } else if (key == "postproc.multiclass") {
            cfg.postproc_multiclass = parse_bool(key, value);
        } else if (key == "synthetic.train") {
            cfg.synthetic_train = static_cast<int>(parse_int(key, value));
        } else if (key == "synthetic.test") {
            cfg.synthetic_test = static_cast<int>(parse_int(key, value));
        } else {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

void RunConfig::validate() const {
    const int k = class_count(scheme);
    ArchitectureSpec s = student;
    s.num_classes = k;
    s.validate();
    ArchitectureSpec t = teacher;
    t.num_classes = k;
    t.validate();
    if (patch_size < 16 || patch_size % 16 != 0)
        throw ConfigError("config: tile.patch must be >= 16 and divisible by 16");
    if (stride == 0 || stride > patch_size)
        throw ConfigError("config: tile.stride must be in [1, tile.patch]");
    for (const ArchitectureSpec* spec : {&s, &t}) {
        uint32_t div = 1u << spec->depth();
        if (patch_size % div != 0)
            throw ConfigError("config: tile.patch must be divisible by 2^depth = " +
                              std::to_string(div));
    }
    if (synthetic_train < 1 || synthetic_test < 0)
        throw ConfigError("config: synthetic counts out of range");
    teacher_train.validate();
    distill.validate();
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

namespace {
const std::vector<std::string> kSyntheticBands = {"B02", "B03", "B04", "B08"};
}

void generate_synthetic_pair(uint64_t sample_seed, uint32_t patch, BandStack& stack,
                             MaskRaster& mask) {
    Rng rng(sample_seed);
    const uint32_t n = patch;
    const size_t plane = static_cast<size_t>(n) * n;

    stack = BandStack{};
    stack.height = n;
    stack.width = n;
    stack.bands = kSyntheticBands;
    stack.data.assign(stack.bands.size(), std::vector<float>(plane));

    // Textured background: per-band base level plus shared low-frequency
    // waves and mild per-pixel noise.
    std::vector<double> base(stack.bands.size());
    for (auto& b : base) b = rng.uniform(0.10, 0.40);
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::vector<Wave> waves(3);
    for (auto& wv : waves) {
        wv.fy = rng.uniform(0.5, 3.0) * 2.0 * M_PI / n;
        wv.fx = rng.uniform(0.5, 3.0) * 2.0 * M_PI / n;
        wv.phase = rng.uniform(0.0, 2.0 * M_PI);
        wv.amp = rng.uniform(0.02, 0.08);
    }

    // Soft-edged cloud blobs.
    const int blob_count = static_cast<int>(rng.below(6)); // 0..5
    struct Blob {
        double cy, cx, sigma;
    };
    std::vector<Blob> blobs(blob_count);
    for (auto& bl : blobs) {
        bl.cy = rng.uniform(0.0, n);
        bl.cx = rng.uniform(0.0, n);
        bl.sigma = rng.uniform(n / 12.0, n / 4.0);
    }
    std::vector<double> gain(stack.bands.size());
    for (auto& g : gain) g = rng.uniform(0.50, 0.70);

    mask = MaskRaster{};
    mask.height = n;
    mask.width = n;
    mask.classes = 2;
    mask.scheme = MaskScheme::BinaryCloud;
    mask.data.resize(plane);

    std::vector<double> noise(plane);
    for (double& v : noise) v = rng.uniform(-0.01, 0.01);

    for (uint32_t y = 0; y < n; ++y) {
        for (uint32_t x = 0; x < n; ++x) {
            const size_t i = static_cast<size_t>(y) * n + x;
            double texture = 0.0;
            for (const auto& wv : waves)
                texture += wv.amp * std::sin(wv.fy * y + wv.fx * x + wv.phase);
            double field = 0.0;
            for (const auto& bl : blobs) {
                const double dy = y - bl.cy, dx = x - bl.cx;
                field = std::max(field,
                                 std::exp(-(dy * dy + dx * dx) / (2.0 * bl.sigma * bl.sigma)));
            }
            mask.data[i] = field > 0.5 ? 1 : 0;
            const double cloud = std::min(1.0, field * 1.2);
            for (size_t b = 0; b < stack.bands.size(); ++b)
                stack.data[b][i] = static_cast<float>(
                    base[b] + texture + noise[i] + gain[b] * cloud);
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset directories
// ---------------------------------------------------------------------------

std::vector<std::string> read_manifest(const fs::path& dir) {
    std::ifstream is(dir / "manifest.txt");
    if (!is) throw DataError("cannot open manifest in " + dir.string());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (!line.empty()) ids.push_back(line);
    }
    if (ids.empty()) throw DataError("empty manifest in " + dir.string());
    return ids;
}

void write_manifest(const std::vector<std::string>& ids, const fs::path& dir) {
    std::ofstream os(dir / "manifest.txt", std::ios::trunc);
    if (!os) throw DataError("cannot write manifest in " + dir.string());
    for (const auto& id : ids) os << id << '\n';
    os.flush();
    if (!os) throw DataError("write failed for manifest in " + dir.string());
}

namespace {

Tensor tensor_from_stack(const BandStack& stack) {
    Tensor t(1, static_cast<int>(stack.bands.size()), static_cast<int>(stack.height),
             static_cast<int>(stack.width));
    for (size_t b = 0; b < stack.data.size(); ++b)
        std::copy(stack.data[b].begin(), stack.data[b].end(),
                  t.ptr(0, static_cast<int>(b)));
    return t;
}

} // namespace

SegDataset load_seg_dataset(const fs::path& split_dir, const NormStats& stats,
                            MaskScheme scheme, uint32_t patch, uint32_t stride,
                            bool require_masks) {
    SegDataset ds;
    ds.scheme = scheme;
    ds.num_classes = class_count(scheme);
    ds.patch = static_cast<int>(patch);
    for (const auto& id : read_manifest(split_dir)) {
        BandStack stack = load_band_stack(split_dir / (id + ".cbsk"));
        BandStack norm = normalize(stack, stats);
        if (ds.in_channels == 0)
            ds.in_channels = static_cast<int>(norm.bands.size());
        else if (ds.in_channels != static_cast<int>(norm.bands.size()))
            throw DataError("scene " + id + " band count differs from the rest");

        std::optional<MaskRaster> mask;
        const fs::path mask_path = split_dir / (id + ".cmsk");
        if (fs::exists(mask_path)) {
            mask = load_mask(mask_path);
            if (mask->height != stack.height || mask->width != stack.width)
                throw DataError("mask/stack size mismatch for pair '" + id + "'");
            if (mask->scheme != scheme)
                throw DataError("mask scheme mismatch for '" + id + "'");
        } else if (require_masks) {
            throw DataError("missing mask for scene '" + id + "'");
        }

        TileLayout layout = plan_tiles(stack.height, stack.width, patch, stride);
        auto stack_tiles = extract_tiles(norm, layout);
        std::vector<MaskRaster> mask_tiles;
        if (mask) mask_tiles = extract_tiles(*mask, layout);
        const bool single = layout.placements.size() == 1 &&
                            stack.height == patch && stack.width == patch;
        for (size_t t = 0; t < stack_tiles.size(); ++t) {
            SegSample s;
            s.id = single ? id
                          : id + "#" + std::to_string(layout.placements[t].row) + "_" +
                                std::to_string(layout.placements[t].col);
            s.input = tensor_from_stack(stack_tiles[t]);
            if (mask) s.labels = mask_tiles[t].data;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

namespace {

void prepare_synthetic_split(const RunConfig& cfg, const std::string& split, int count,
                             const fs::path& dir, std::vector<BandStack>* stats_pool) {
    fs::create_directories(dir);
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), i);
        const std::string id = buf;
        BandStack stack;
        MaskRaster mask;
        generate_synthetic_pair(derive_seed(cfg.seed, "synthetic:" + id),
                                cfg.patch_size, stack, mask);
        save_band_stack(stack, dir / (id + ".cbsk"));
        save_mask(mask, dir / (id + ".cmsk"));
        ids.push_back(id);
        if (stats_pool) stats_pool->push_back(std::move(stack));
    }
    write_manifest(ids, dir);
}

void prepare_raw_split(const fs::path& raw_split, const fs::path& dir,
                       std::vector<BandStack>* stats_pool) {
    fs::create_directories(dir);
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(raw_split))
        if (entry.path().extension() == ".cbsk")
            ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("no .cbsk stacks in " + raw_split.string());
    for (const auto& id : ids) {
        BandStack stack = load_band_stack(raw_split / (id + ".cbsk"));
        const fs::path mask_path = raw_split / (id + ".cmsk");
        if (!fs::exists(mask_path))
            throw DataError("stack '" + id + "' has no matching .cmsk mask");
        MaskRaster mask = load_mask(mask_path);
        if (mask.height != stack.height || mask.width != stack.width)
            throw DataError("mask/stack size mismatch for pair '" + id + "'");
        fs::copy_file(raw_split / (id + ".cbsk"), dir / (id + ".cbsk"),
                      fs::copy_options::overwrite_existing);
        fs::copy_file(mask_path, dir / (id + ".cmsk"),
                      fs::copy_options::overwrite_existing);
        if (stats_pool) stats_pool->push_back(std::move(stack));
    }
    write_manifest(ids, dir);
}

} // namespace

fs::path cmd_prepare(const RunConfig& cfg, const PrepareOptions& opts) {
    const fs::path data = cfg.data_dir();
    fs::create_directories(data);
    std::vector<BandStack> train_stacks;

    if (opts.synthetic) {
        prepare_synthetic_split(cfg, "train", cfg.synthetic_train, data / "train",
                                &train_stacks);
        prepare_synthetic_split(cfg, "test", cfg.synthetic_test, data / "test", nullptr);
    } else {
        if (opts.raw_dir.empty() || !fs::exists(opts.raw_dir))
            throw DataError("prepare: raw directory not found: " + opts.raw_dir.string());
        bool has_splits = fs::exists(opts.raw_dir / "train");
        if (has_splits) {
            prepare_raw_split(opts.raw_dir / "train", data / "train", &train_stacks);
            for (const char* split : {"val", "test"})
                if (fs::exists(opts.raw_dir / split))
                    prepare_raw_split(opts.raw_dir / split, data / split, nullptr);
        } else {
            prepare_raw_split(opts.raw_dir, data / "train", &train_stacks);
        }
    }

    NormStats stats = compute_norm_stats(train_stacks);
    save_norm_stats(stats, data / "norm_stats.txt");
    return data;
}

// ---------------------------------------------------------------------------
// training commands
// ---------------------------------------------------------------------------

namespace {

struct LoadedData {
    NormStats stats;
    SegDataset train;
    std::optional<SegDataset> val;
};

LoadedData load_training_data(const RunConfig& cfg) {
    const fs::path data = cfg.data_dir();
    if (!fs::exists(data / "train"))
        throw DataError("no prepared dataset at " + data.string() + " (run prepare)");
    LoadedData out;
    out.stats = load_norm_stats(data / "norm_stats.txt");
    out.train = load_seg_dataset(data / "train", out.stats, cfg.scheme, cfg.patch_size,
                                 cfg.stride, true);
    if (fs::exists(data / "val"))
        out.val = load_seg_dataset(data / "val", out.stats, cfg.scheme, cfg.patch_size,
                                   cfg.stride, true);
    return out;
}

ArchitectureSpec resolved_spec(const RunConfig& cfg, bool teacher, int in_channels) {
    ArchitectureSpec spec = teacher ? cfg.teacher : cfg.student;
    spec.in_channels = in_channels;
    spec.num_classes = class_count(cfg.scheme);
    return spec;
}

DistillConfig resolved_train_cfg(const RunConfig& cfg, bool teacher) {
    DistillConfig tc = teacher ? cfg.teacher_train : cfg.distill;
    if (teacher) tc.alpha = 1.0;
    tc.seed = derive_seed(cfg.seed, teacher ? "teacher-train" : "student-train");
    tc.ignore_class_ids = ignore_classes(cfg.scheme);
    return tc;
}

} // namespace

fs::path cmd_train_teacher(const RunConfig& cfg) {
    LoadedData data = load_training_data(cfg);
    ArchitectureSpec spec = resolved_spec(cfg, true, data.train.in_channels);
    UNet model = UNet::build(spec, derive_seed(cfg.seed, "teacher-init"));
    DistillConfig tc = resolved_train_cfg(cfg, true);

    TrainResult result =
        train(model, data.train, data.val ? &*data.val : nullptr, nullptr, tc);

    const fs::path out = cfg.out / "teacher";
    fs::create_directories(out);
    save_weights(result.best_weights, out / "weights.cwgt");
    save_history_csv(result.history, out / "history.csv");
    return out / "weights.cwgt";
}

fs::path cmd_export_logits(const RunConfig& cfg) {
    LoadedData data = load_training_data(cfg);
    ArchitectureSpec spec = resolved_spec(cfg, true, data.train.in_channels);
    UNet model = UNet::load(cfg.out / "teacher" / "weights.cwgt", spec);

    const fs::path out = cfg.out / "teacher_logits";
    fs::create_directories(out);
    std::vector<std::string> ids;
    for (const auto& s : data.train.samples) {
        Tensor logits = model.forward(s.input, Mode::Eval);
        save_logit_map(logits, out / (s.id + ".cbsk"));
        ids.push_back(s.id);
    }
    write_manifest(ids, out);
    return out;
}

fs::path cmd_distill(const RunConfig& cfg) {
    LoadedData data = load_training_data(cfg);
    ArchitectureSpec spec = resolved_spec(cfg, false, data.train.in_channels);
    UNet model = UNet::build(spec, derive_seed(cfg.seed, "student-init"));
    DistillConfig tc = resolved_train_cfg(cfg, false);

    std::unique_ptr<TeacherBackend> backend;
    if (cfg.teacher_backend == RunConfig::TeacherBackendKind::Precomputed) {
        backend = std::make_unique<PrecomputedTeacher>(cfg.out / "teacher_logits");
    } else {
        ArchitectureSpec tspec = resolved_spec(cfg, true, data.train.in_channels);
        backend = std::make_unique<LiveTeacher>(
            UNet::load(cfg.out / "teacher" / "weights.cwgt", tspec));
    }

    TrainResult result =
        train(model, data.train, data.val ? &*data.val : nullptr, backend.get(), tc);

    const fs::path out = cfg.out / "student";
    fs::create_directories(out);
    save_weights(result.best_weights, out / "weights.cwgt");
    save_history_csv(result.history, out / "history.csv");
    return out / "weights.cwgt";
}

// ---------------------------------------------------------------------------
// predict / evaluate / benchmark
// ---------------------------------------------------------------------------

MaskRaster postprocess_prediction(const MaskRaster& pred, const PlaneMap& logits,
                                  bool multiclass_enabled) {
    if (pred.scheme == MaskScheme::BinaryCloud) return adaptive_postprocess(pred);
    if (!multiclass_enabled) return pred;

    // Binarize cloud-vs-rest, run the rule, then re-embed: promoted pixels
    // become cloud, demoted pixels take their best non-cloud class.
    MaskRaster binary = pred;
    binary.classes = 2;
    binary.scheme = MaskScheme::BinaryCloud;
    for (auto& v : binary.data) v = (v == kz::kCloud) ? 1 : 0;
    MaskRaster cleaned = adaptive_postprocess(binary);

    MaskRaster out = pred;
    const size_t plane = pred.size();
    for (size_t i = 0; i < plane; ++i) {
        const bool was = binary.data[i] == 1;
        const bool now = cleaned.data[i] == 1;
        if (was == now) continue;
        if (now) {
            out.data[i] = kz::kCloud;
        } else {
            uint8_t best = kz::kClear;
            float bv = -std::numeric_limits<float>::infinity();
            for (uint32_t k = 0; k < logits.channels; ++k) {
                if (k == kz::kCloud) continue;
                const float v = logits.data[k * plane + i];
                if (v > bv) {
                    bv = v;
                    best = static_cast<uint8_t>(k);
                }
            }
            out.data[i] = best;
        }
    }
    return out;
}

namespace {

struct ScenePrediction {
    std::string id;
    MaskRaster mask;
    double latency_ms = 0.0;
};

ScenePrediction predict_scene(const RunConfig& cfg, UNet& model, const NormStats& stats,
                              const fs::path& split_dir, const std::string& id) {
    BandStack stack = load_band_stack(split_dir / (id + ".cbsk"));
    BandStack norm = normalize(stack, stats);
    TileLayout layout = plan_tiles(stack.height, stack.width, cfg.patch_size, cfg.stride);
    auto tiles = extract_tiles(norm, layout);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<PlaneMap> logit_tiles;
    logit_tiles.reserve(tiles.size());
    for (const auto& tile : tiles) {
        Tensor logits = model.forward(tensor_from_stack(tile), Mode::Eval);
        PlaneMap pm;
        pm.channels = static_cast<uint32_t>(logits.c);
        pm.height = static_cast<uint32_t>(logits.h);
        pm.width = static_cast<uint32_t>(logits.w);
        pm.data.assign(logits.data.begin(), logits.data.end());
        logit_tiles.push_back(std::move(pm));
    }
    PlaneMap scene_logits = stitch(logit_tiles, layout, stack.height, stack.width);
    const auto t1 = std::chrono::steady_clock::now();

    ScenePrediction out;
    out.id = id;
    out.mask = argmax_mask(scene_logits, cfg.scheme);
    if (cfg.postproc_enabled)
        out.mask = postprocess_prediction(out.mask, scene_logits, cfg.postproc_multiclass);
    out.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    return out;
}

} // namespace

fs::path cmd_predict(const RunConfig& cfg, const fs::path& input_split,
                     const fs::path& weights) {
    NormStats stats = load_norm_stats(cfg.data_dir() / "norm_stats.txt");
    // Probe channel count from the first scene.
    auto ids = read_manifest(input_split);
    BandStack first = load_band_stack(input_split / (ids.front() + ".cbsk"));
    ArchitectureSpec spec =
        resolved_spec(cfg, false, static_cast<int>(first.bands.size()));
    UNet model = UNet::load(weights, spec);

    const fs::path out = cfg.out / "pred";
    fs::create_directories(out);
    for (const auto& id : ids) {
        ScenePrediction p = predict_scene(cfg, model, stats, input_split, id);
        save_mask(p.mask, out / (id + ".cmsk"));
    }
    return out;
}

EvaluateResult cmd_evaluate(const RunConfig& cfg, const fs::path& pred_dir,
                            const fs::path& gt_dir) {
    auto ids = read_manifest(gt_dir);
    const auto classes = evaluated_classes(cfg.scheme);
    const auto ignore = ignore_classes(cfg.scheme);

    std::vector<MetricReport> reports;
    std::vector<MaskRaster> preds, gts;
    for (const auto& id : ids) {
        MaskRaster pred = load_mask(pred_dir / (id + ".cmsk"));
        MaskRaster gt = load_mask(gt_dir / (id + ".cmsk"));
        MetricReport report;
        report.scene_id = id;
        for (uint8_t cls : classes)
            report.per_class[cls] = metrics_from_confusion(confusion(pred, gt, cls, ignore));
        reports.push_back(std::move(report));
        preds.push_back(std::move(pred));
        gts.push_back(std::move(gt));
    }

    const fs::path out = cfg.out / "reports";
    fs::create_directories(out);
    EvaluateResult result;
    result.per_scene_csv = out / "per_scene.csv";
    result.aggregate_csv = out / "aggregate.csv";
    result.pooled_csv = out / "pooled.csv";
    write_per_scene_csv(reports, result.per_scene_csv);
    write_aggregate_csv(reports, result.aggregate_csv);

    std::ofstream os(result.pooled_csv, std::ios::trunc);
    if (!os) throw DataError("cannot open " + result.pooled_csv.string());
    os << "class,pooled_ji\n";
    std::vector<const MaskRaster*> pp, gp;
    for (size_t i = 0; i < preds.size(); ++i) {
        pp.push_back(&preds[i]);
        gp.push_back(&gts[i]);
    }
    for (uint8_t cls : classes)
        os << static_cast<int>(cls) << ','
           << format_double(pooled_jaccard(pp, gp, cls, ignore)) << '\n';
    os.flush();
    if (!os) throw DataError("write failed for " + result.pooled_csv.string());
    return result;
}

fs::path cmd_benchmark(const RunConfig& cfg, const fs::path& weights,
                       const fs::path& data_split) {
    NormStats stats = load_norm_stats(cfg.data_dir() / "norm_stats.txt");
    auto ids = read_manifest(data_split);
    if (ids.empty()) throw DataError("benchmark: empty dataset");
    BandStack first = load_band_stack(data_split / (ids.front() + ".cbsk"));
    ArchitectureSpec spec =
        resolved_spec(cfg, false, static_cast<int>(first.bands.size()));
    UNet model = UNet::load(weights, spec);

    nlohmann::json scenes = nlohmann::json::array();
    size_t patches = 0;
    double elapsed_ms = 0.0;
    for (const auto& id : ids) {
        TileLayout layout;
        {
            BandStack stack = load_band_stack(data_split / (id + ".cbsk"));
            layout = plan_tiles(stack.height, stack.width, cfg.patch_size, cfg.stride);
        }
        ScenePrediction p = predict_scene(cfg, model, stats, data_split, id);
        patches += layout.placements.size();
        elapsed_ms += p.latency_ms;
        scenes.push_back({{"id", id}, {"latency_ms", p.latency_ms}});
    }

    nlohmann::json report = {
        {"param_count", model.parameter_count()},
        {"patch_size", cfg.patch_size},
        {"stride", cfg.stride},
        {"scene_count", ids.size()},
        {"patch_count", patches},
        {"elapsed_seconds", elapsed_ms / 1000.0},
        {"patches_per_second",
         elapsed_ms > 0.0 ? static_cast<double>(patches) / (elapsed_ms / 1000.0) : 0.0},
        {"scenes", scenes},
    };
    fs::create_directories(cfg.out);
    const fs::path out = cfg.out / "benchmark.json";
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw DataError("cannot open " + out.string());
    os << report.dump(2) << '\n';
    os.flush();
    if (!os) throw DataError("write failed for " + out.string());
    return out;
}

} // namespace cloudkd
