#include "refblend/metrics.hpp"

#include <cmath>

#include <json.hpp>

namespace refblend {

namespace {

// Patch vectors: grid-aligned 2x2 blocks whose pixels all carry the region
// flag, flattened RGB in [0,1], L2-normalized. Falls back to single pixels
// when no complete block fits.
std::vector<std::vector<double>> region_patches(const Tensor& img, const std::vector<uint8_t>& flags,
                                                int S) {
    auto color = [&](int y, int x, int c) {
        return std::clamp((img(c, y, x) + 1.0) * 0.5, 0.0, 1.0);
    };
    std::vector<std::vector<double>> patches;
    for (int y = 0; y + 1 < S; y += 2) {
        for (int x = 0; x + 1 < S; x += 2) {
            bool all_in = true;
            for (int dy = 0; dy < 2 && all_in; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    if (!flags[static_cast<size_t>(y + dy) * S + (x + dx)]) {
                        all_in = false;
                        break;
                    }
            if (!all_in) continue;
            std::vector<double> p;
            p.reserve(12);
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx)
                    for (int c = 0; c < 3; ++c) p.push_back(color(y + dy, x + dx, c));
            patches.push_back(std::move(p));
        }
    }
    if (patches.empty()) {
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                if (!flags[static_cast<size_t>(y) * S + x]) continue;
                patches.push_back({color(y, x, 0), color(y, x, 1), color(y, x, 2)});
            }
    }
    // normalize; drop zero vectors
    std::vector<std::vector<double>> out;
    for (auto& p : patches) {
        double norm = 0.0;
        for (double v : p) norm += v * v;
        norm = std::sqrt(norm);
        if (norm <= 1e-12) continue;
        for (double& v : p) v /= norm;
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<double> mean_color(const Tensor& img, const std::vector<uint8_t>& flags, int S) {
    std::vector<double> mean(3, 0.0);
    int count = 0;
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            if (!flags[static_cast<size_t>(y) * S + x]) continue;
            ++count;
            for (int c = 0; c < 3; ++c) mean[static_cast<size_t>(c)] += std::clamp((img(c, y, x) + 1.0) * 0.5, 0.0, 1.0);
        }
    if (count > 0)
        for (double& v : mean) v /= count;
    return mean;
}

} // namespace

ConceptScores concept_fidelity(const Tensor& generated, const SemanticMap& map, int label,
                               const ReferenceConcept& ref) {
    if (generated.rank() != 3 || generated.dim(0) != 3)
        throw UsageError("shape_mismatch", "generated latent must be (3,S,S)");
    int S = generated.dim(1);
    if (S % map.h != 0 || generated.dim(2) % map.w != 0)
        throw UsageError("shape_mismatch", "semantic map does not tile the image");
    int fy = S / map.h, fx = generated.dim(2) / map.w;

    ConceptScores scores;
    std::vector<uint8_t> gen_flags(static_cast<size_t>(S) * S, 0);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x)
            if (map.label(y / fy, x / fx) == label) {
                gen_flags[static_cast<size_t>(y) * S + x] = 1;
                ++scores.region_pixels;
            }
    if (scores.region_pixels == 0) return scores; // undefined, not an error

    int RS = ref.image.dim(1);
    std::vector<uint8_t> ref_flags(static_cast<size_t>(RS) * RS, 0);
    int ref_count = 0;
    for (int y = 0; y < RS; ++y)
        for (int x = 0; x < RS; ++x)
            if (ref.mask(y, x) != 0.0) {
                ref_flags[static_cast<size_t>(y) * RS + x] = 1;
                ++ref_count;
            }
    if (ref_count == 0) return scores;

    std::vector<double> gm = mean_color(generated, gen_flags, S);
    std::vector<double> rm = mean_color(ref.image, ref_flags, RS);
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        double d = gm[static_cast<size_t>(c)] - rm[static_cast<size_t>(c)];
        d2 += d * d;
    }
    scores.color_distance = std::sqrt(d2);

    auto gp = region_patches(generated, gen_flags, S);
    auto rp = region_patches(ref.image, ref_flags, RS);
    if (gp.empty() || rp.empty()) return scores;
    double acc = 0.0;
    for (const auto& a : gp)
        for (const auto& b : rp) {
            double dot = 0.0;
            size_t n = std::min(a.size(), b.size());
            for (size_t i = 0; i < n; ++i) dot += a[i] * b[i];
            acc += dot;
        }
    scores.patch_cosine = acc / (static_cast<double>(gp.size()) * static_cast<double>(rp.size()));
    scores.defined = true;
    return scores;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["seed"] = report.seed;
    j["concepts"] = nlohmann::ordered_json::array();
    for (size_t i = 0; i < report.concepts.size(); ++i) {
        const ConceptScores& s = report.concepts[i];
        nlohmann::ordered_json c;
        c["index"] = i + 1;
        c["defined"] = s.defined;
        c["region_pixels"] = s.region_pixels;
        if (s.defined) {
            c["color_distance"] = s.color_distance;
            c["patch_cosine"] = s.patch_cosine;
        }
        if (i < report.baseline_color_distance.size() && report.baseline_color_distance[i]) {
            c["baseline_color_distance"] = *report.baseline_color_distance[i];
            c["delta_color_distance"] = s.color_distance - *report.baseline_color_distance[i];
        }
        if (i < report.baseline_patch_cosine.size() && report.baseline_patch_cosine[i]) {
            c["baseline_patch_cosine"] = *report.baseline_patch_cosine[i];
            c["delta_patch_cosine"] = s.patch_cosine - *report.baseline_patch_cosine[i];
        }
        j["concepts"].push_back(c);
    }
    if (!report.config_echo.empty()) j["config"] = nlohmann::ordered_json::parse(report.config_echo);
    return j.dump(2) + "\n";
}

} // namespace refblend
