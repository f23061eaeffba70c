#include "cloudkd/teacher.hpp"

#include <cmath>
#include <fstream>

namespace cloudkd {

void save_logit_map(const Tensor& logits, const std::filesystem::path& path) {
    if (logits.n != 1) throw std::invalid_argument("logit map must have batch size 1");
    BandStack stack;
    stack.height = static_cast<uint32_t>(logits.h);
    stack.width = static_cast<uint32_t>(logits.w);
    for (int k = 0; k < logits.c; ++k) {
        stack.bands.push_back("LGT" + std::to_string(k));
        stack.data.emplace_back(logits.ptr(0, k), logits.ptr(0, k) + logits.plane());
    }
    save_band_stack(stack, path, DType::F32);
}

Tensor load_logit_map(const std::filesystem::path& path) {
    BandStack stack = load_band_stack(path);
    for (size_t k = 0; k < stack.bands.size(); ++k)
        if (stack.bands[k] != "LGT" + std::to_string(k))
            throw FormatError(FormatIssue::BadField,
                              "not a logit container: unexpected band " + stack.bands[k]);
    Tensor t(1, static_cast<int>(stack.bands.size()), static_cast<int>(stack.height),
             static_cast<int>(stack.width));
    for (size_t k = 0; k < stack.bands.size(); ++k)
        std::copy(stack.data[k].begin(), stack.data[k].end(), t.ptr(0, static_cast<int>(k)));
    return t;
}

PrecomputedTeacher::PrecomputedTeacher(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest)
        throw DataError("cannot open teacher logit manifest in " + dir.string());
    std::string id;
    while (std::getline(manifest, id)) {
        if (id.empty()) continue;
        Tensor t = load_logit_map(dir / (id + ".cbsk"));
        if (num_classes_ == 0)
            num_classes_ = t.c;
        else if (t.c != num_classes_)
            throw DataError("logit container " + id + " has inconsistent class count");
        logits_.emplace(id, std::move(t));
    }
    if (logits_.empty())
        throw DataError("teacher logit manifest is empty in " + dir.string());
}

Tensor PrecomputedTeacher::logits(const SegSample& sample) const {
    auto it = logits_.find(sample.id);
    if (it == logits_.end())
        throw DataError("unknown patch id '" + sample.id + "' in precomputed teacher");
    const Tensor& t = it->second;
    if (t.h != sample.input.h || t.w != sample.input.w)
        throw DataError("stored logits for '" + sample.id + "' do not match patch shape");
    return t;
}

LiveTeacher::LiveTeacher(UNet model) : model_(std::move(model)) {}

Tensor LiveTeacher::logits(const SegSample& sample) const {
    return model_.forward(sample.input, Mode::Eval);
}

EnsembleTeacher::EnsembleTeacher(std::vector<std::unique_ptr<TeacherBackend>> members,
                                 bool fuse_in_prob_space)
    : members_(std::move(members)), fuse_in_prob_space_(fuse_in_prob_space) {
    if (members_.empty()) throw std::invalid_argument("ensemble needs >= 1 member");
    for (const auto& m : members_)
        if (m->num_classes() != members_.front()->num_classes())
            throw std::invalid_argument("ensemble members disagree on class count");
}

Tensor EnsembleTeacher::logits(const SegSample& sample) const {
    Tensor first = members_.front()->logits(sample);
    if (members_.size() == 1) return first;

    if (!fuse_in_prob_space_) {
        Tensor acc = first;
        for (size_t i = 1; i < members_.size(); ++i) {
            Tensor t = members_[i]->logits(sample);
            if (t.size() != acc.size())
                throw DataError("ensemble member logit shape mismatch");
            for (size_t j = 0; j < acc.size(); ++j) acc.data[j] += t.data[j];
        }
        const float inv = 1.f / static_cast<float>(members_.size());
        for (float& v : acc.data) v *= inv;
        return acc;
    }

    // Probability-space fusion: mean of per-member softmax, re-expressed as
    // log-probabilities.
    const int K = first.c;
    const size_t plane = first.plane();
    std::vector<double> prob(static_cast<size_t>(K) * plane, 0.0);
    auto accumulate = [&](const Tensor& t) {
        for (size_t p = 0; p < plane; ++p) {
            double mx = -1e300;
            for (int k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(t.data[k * plane + p]));
            double denom = 0.0;
            for (int k = 0; k < K; ++k) denom += std::exp(t.data[k * plane + p] - mx);
            for (int k = 0; k < K; ++k)
                prob[k * plane + p] += std::exp(t.data[k * plane + p] - mx) / denom;
        }
    };
    accumulate(first);
    for (size_t i = 1; i < members_.size(); ++i) {
        Tensor t = members_[i]->logits(sample);
        if (t.size() != first.size())
            throw DataError("ensemble member logit shape mismatch");
        accumulate(t);
    }
    Tensor out(1, K, first.h, first.w);
    const double inv = 1.0 / static_cast<double>(members_.size());
    for (size_t j = 0; j < out.size(); ++j)
        out.data[j] = static_cast<float>(std::log(prob[j] * inv));
    return out;
}

} // namespace cloudkd
