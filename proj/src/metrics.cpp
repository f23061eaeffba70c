#include "cloudkd/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>

namespace cloudkd {

ConfusionMatrix confusion(const MaskRaster& pred, const MaskRaster& gt,
                          uint8_t class_id, const std::vector<uint8_t>& ignore_ids) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("confusion: prediction/ground-truth shape mismatch");
    bool ignore_lut[256] = {};
    for (uint8_t id : ignore_ids) ignore_lut[id] = true;

    ConfusionMatrix cm;
    const size_t n = gt.size();
    for (size_t i = 0; i < n; ++i) {
        uint8_t g = gt.data[i];
        if (ignore_lut[g]) {
            ++cm.ignored;
            continue;
        }
        bool gp = g == class_id;
        bool pp = pred.data[i] == class_id;
        if (gp && pp)
            ++cm.tp;
        else if (!gp && pp)
            ++cm.fp;
        else if (gp && !pp)
            ++cm.fn;
        else
            ++cm.tn;
    }
    return cm;
}

namespace {

MetricValue ratio(uint64_t num, uint64_t den) {
    if (den == 0) return {0.0, true};
    return {static_cast<double>(num) / static_cast<double>(den), false};
}

} // namespace

ClassMetrics metrics_from_confusion(const ConfusionMatrix& cm) {
    ClassMetrics m;
    m.ji = ratio(cm.tp, cm.tp + cm.fp + cm.fn);
    m.pr = ratio(cm.tp, cm.tp + cm.fp);
    m.re = ratio(cm.tp, cm.tp + cm.fn);
    m.spe = ratio(cm.tn, cm.tn + cm.fp);
    m.oa = ratio(cm.tp + cm.tn, cm.tp + cm.tn + cm.fp + cm.fn);
    return m;
}

std::string ClassMetrics::flags() const {
    std::string f;
    auto add = [&f](bool undef, const char* name) {
        if (!undef) return;
        if (!f.empty()) f += '|';
        f += name;
    };
    add(ji.undefined, "ji_undef");
    add(pr.undefined, "pr_undef");
    add(re.undefined, "re_undef");
    add(spe.undefined, "spe_undef");
    add(oa.undefined, "oa_undef");
    return f;
}

AggregateEntry aggregate(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("aggregate: empty value list");
    AggregateEntry e;
    e.count = values.size();
    const size_t n = values.size();

    double sum = 0.0;
    for (double v : values) sum += v;
    e.mean = sum / static_cast<double>(n);

    std::vector<double> sorted(values);
    std::sort(sorted.begin(), sorted.end());
    e.median = (n % 2 == 1) ? sorted[n / 2]
                            : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    if (n == 1) {
        e.ci_low = e.ci_high = e.mean;
        return e;
    }
    double sq = 0.0;
    for (double v : values) {
        double d = v - e.mean;
        sq += d * d;
    }
    double s = std::sqrt(sq / static_cast<double>(n - 1));
    if (s == 0.0) {
        e.ci_low = e.ci_high = e.mean;
        return e;
    }
    boost::math::students_t dist(static_cast<double>(n - 1));
    double t = boost::math::quantile(dist, 0.975);
    double half = t * s / std::sqrt(static_cast<double>(n));
    e.ci_low = e.mean - half;
    e.ci_high = e.mean + half;
    return e;
}

double pooled_jaccard(const std::vector<const MaskRaster*>& preds,
                      const std::vector<const MaskRaster*>& gts, uint8_t class_id,
                      const std::vector<uint8_t>& ignore_ids) {
    if (preds.size() != gts.size())
        throw std::invalid_argument("pooled_jaccard: mismatched scene lists");
    if (preds.empty())
        throw std::invalid_argument("pooled_jaccard: no scenes");
    ConfusionMatrix total;
    for (size_t i = 0; i < preds.size(); ++i)
        total += confusion(*preds[i], *gts[i], class_id, ignore_ids);
    return metrics_from_confusion(total).ji.value;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    return os;
}

} // namespace

void write_per_scene_csv(const std::vector<MetricReport>& reports,
                         const std::filesystem::path& path) {
    auto os = open_csv(path);
    os << "scene,class,ji,pr,re,spe,oa,flags\n";
    for (const auto& r : reports)
        for (const auto& [cls, m] : r.per_class)
            os << r.scene_id << ',' << static_cast<int>(cls) << ','
               << format_double(m.ji.value) << ',' << format_double(m.pr.value)
               << ',' << format_double(m.re.value) << ','
               << format_double(m.spe.value) << ',' << format_double(m.oa.value)
               << ',' << m.flags() << '\n';
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

void write_aggregate_csv(const std::vector<MetricReport>& reports,
                         const std::filesystem::path& path) {
    // Collect per-class metric series across scenes, skipping undefined values.
    std::map<uint8_t, std::map<std::string, std::vector<double>>> series;
    auto push = [&series](uint8_t cls, const char* name, const MetricValue& v) {
        if (!v.undefined) series[cls][name].push_back(v.value);
    };
    for (const auto& r : reports)
        for (const auto& [cls, m] : r.per_class) {
            push(cls, "ji", m.ji);
            push(cls, "pr", m.pr);
            push(cls, "re", m.re);
            push(cls, "spe", m.spe);
            push(cls, "oa", m.oa);
        }

    auto os = open_csv(path);
    os << "class,metric,mean,median,ci_low,ci_high\n";
    static const char* kOrder[] = {"ji", "pr", "re", "spe", "oa"};
    for (const auto& [cls, metrics] : series)
        for (const char* name : kOrder) {
            auto it = metrics.find(name);
            if (it == metrics.end() || it->second.empty()) continue;
            AggregateEntry e = aggregate(it->second);
            os << static_cast<int>(cls) << ',' << name << ','
               << format_double(e.mean) << ',' << format_double(e.median) << ','
               << format_double(e.ci_low) << ',' << format_double(e.ci_high)
               << '\n';
        }
    os.flush();
    if (!os) throw DataError("write failed for " + path.string());
}

} // namespace cloudkd
