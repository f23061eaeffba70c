#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cloudkd/raster.hpp"

namespace cloudkd {

// One-vs-rest pixel counts for a single class.
struct ConfusionMatrix {
    uint64_t tp = 0;
    uint64_t fp = 0;
    uint64_t fn = 0;
    uint64_t tn = 0;
    uint64_t ignored = 0;

    uint64_t evaluated() const { return tp + fp + fn + tn; }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        ignored += o.ignored;
        return *this;
    }
};

ConfusionMatrix confusion(const MaskRaster& pred, const MaskRaster& gt,
                          uint8_t class_id, const std::vector<uint8_t>& ignore_ids);

// A metric whose denominator was 0 reports value 0 with undefined=true;
// aggregation skips undefined entries rather than fabricating a score.
struct MetricValue {
    double value = 0.0;
    bool undefined = false;
};

struct ClassMetrics {
    MetricValue ji;  // TP/(TP+FP+FN)
    MetricValue pr;  // TP/(TP+FP)
    MetricValue re;  // TP/(TP+FN)
    MetricValue spe; // TN/(TN+FP)
    MetricValue oa;  // (TP+TN)/(TP+TN+FP+FN)

    std::string flags() const; // "ji_undef|…", empty when all defined
};

ClassMetrics metrics_from_confusion(const ConfusionMatrix& cm);

struct MetricReport {
    std::string scene_id;
    std::map<uint8_t, ClassMetrics> per_class;
};

// Table-4 style aggregation over scenes.
struct AggregateEntry {
    double mean = 0.0;
    double median = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    size_t count = 0;
};

// mean, median (average of middle two for even n) and the 95% CI
// mu ± t_{0.975, n-1} s/sqrt(n); degenerate (mu, mu) for n = 1.
AggregateEntry aggregate(const std::vector<double>& values);

double pooled_jaccard(const std::vector<const MaskRaster*>& preds,
                      const std::vector<const MaskRaster*>& gts, uint8_t class_id,
                      const std::vector<uint8_t>& ignore_ids);

// CSV exports (External Interfaces):
//   per-scene: scene,class,ji,pr,re,spe,oa,flags
//   aggregate: class,metric,mean,median,ci_low,ci_high
void write_per_scene_csv(const std::vector<MetricReport>& reports,
                         const std::filesystem::path& path);
void write_aggregate_csv(const std::vector<MetricReport>& reports,
                         const std::filesystem::path& path);

} // namespace cloudkd
