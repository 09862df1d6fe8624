#include "refblend/viz.hpp"

#include <algorithm>
#include <cmath>

namespace refblend {

const std::vector<std::array<uint8_t, 3>>& semantic_palette() {
    static const std::vector<std::array<uint8_t, 3>> kPalette = {
        {180, 180, 180}, // background
        {220, 60, 60},   {60, 190, 80},   {70, 90, 220},  {235, 160, 40},
        {160, 70, 200},  {60, 200, 200},  {230, 220, 60}, {230, 120, 180},
    };
    return kPalette;
}

ImageU8 render_semantic_map(const SemanticMap& map) {
    const auto& palette = semantic_palette();
    ImageU8 img;
    img.w = map.w;
    img.h = map.h;
    img.rgb.resize(static_cast<size_t>(map.w) * map.h * 3);
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            int label = map.label(y, x);
            if (label < 0 || label >= static_cast<int>(palette.size()))
                throw UsageError("label_range", "label " + std::to_string(label) + " outside palette");
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = palette[static_cast<size_t>(label)][static_cast<size_t>(c)];
        }
    }
    return img;
}

SemanticMap decode_semantic_map(const ImageU8& img) {
    const auto& palette = semantic_palette();
    SemanticMap map;
    map.h = img.h;
    map.w = img.w;
    map.labels.resize(static_cast<size_t>(img.h) * img.w);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            int found = -1;
            for (size_t l = 0; l < palette.size(); ++l) {
                if (img.at(y, x, 0) == palette[l][0] && img.at(y, x, 1) == palette[l][1] &&
                    img.at(y, x, 2) == palette[l][2]) {
                    found = static_cast<int>(l);
                    break;
                }
            }
            if (found < 0) throw DataError("bad_image", "pixel color not in the semantic palette");
            map.labels[static_cast<size_t>(y) * img.w + x] = found;
        }
    }
    return map;
}

ImageU8 render_heatmap(const Tensor& map2d) {
    if (map2d.rank() != 2) throw UsageError("shape_mismatch", "heatmap expects a rank-2 map");
    double lo = map2d.data[0], hi = map2d.data[0];
    for (double v : map2d.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    double span = hi > lo ? hi - lo : 1.0;
    ImageU8 img;
    img.h = map2d.dim(0);
    img.w = map2d.dim(1);
    img.rgb.resize(static_cast<size_t>(img.w) * img.h * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double u = (map2d(y, x) - lo) / span;
            // dark blue -> red -> yellow
            double r = std::clamp(2.0 * u, 0.0, 1.0);
            double g = std::clamp(2.0 * u - 1.0, 0.0, 1.0);
            double b = std::clamp(0.4 - u, 0.0, 0.4) * 2.5;
            img.at(y, x, 0) = static_cast<uint8_t>(std::lround(r * 255));
            img.at(y, x, 1) = static_cast<uint8_t>(std::lround(g * 255));
            img.at(y, x, 2) = static_cast<uint8_t>(std::lround(b * 255));
        }
    }
    return img;
}

std::vector<Correspondence> correspondence_map(const Tensor& q, const std::vector<Tensor>& ref_keys) {
    if (ref_keys.empty()) throw UsageError("bad_config", "correspondence_map: no reference keys");
    if (q.rank() != 2) throw UsageError("shape_mismatch", "queries must be (n,d)");
    int d = q.dim(1);
    for (const Tensor& k : ref_keys)
        if (k.rank() != 2 || k.dim(1) != d)
            throw UsageError("shape_mismatch", "reference keys must share the query dimension");

    std::vector<Correspondence> out(static_cast<size_t>(q.dim(0)));
    for (int i = 0; i < q.dim(0); ++i) {
        double best = 0.0;
        bool first = true;
        Correspondence bc{0, 0};
        for (size_t ci = 0; ci < ref_keys.size(); ++ci) {
            const Tensor& keys = ref_keys[ci];
            for (int j = 0; j < keys.dim(0); ++j) {
                double dot = 0.0;
                for (int p = 0; p < d; ++p) dot += q(i, p) * keys(j, p);
                if (first || dot > best) { // strict: ties keep the lowest (concept, position)
                    best = dot;
                    bc = Correspondence{static_cast<int>(ci), j};
                    first = false;
                }
            }
        }
        out[static_cast<size_t>(i)] = bc;
    }
    return out;
}

ImageU8 render_correspondence(const std::vector<Correspondence>& corr, int h, int w,
                              const std::vector<int>& key_counts) {
    if (static_cast<int>(corr.size()) != h * w)
        throw UsageError("shape_mismatch", "correspondence length must equal h*w");
    const auto& palette = semantic_palette();
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    for (int i = 0; i < h * w; ++i) {
        const Correspondence& c = corr[static_cast<size_t>(i)];
        size_t color_idx = static_cast<size_t>(c.concept_index + 1) % palette.size();
        int count = c.concept_index < static_cast<int>(key_counts.size())
                        ? key_counts[static_cast<size_t>(c.concept_index)]
                        : 1;
        double shade = 0.35 + 0.65 * (count > 1 ? static_cast<double>(c.key_position) / (count - 1) : 1.0);
        for (int ch = 0; ch < 3; ++ch)
            img.rgb[static_cast<size_t>(i) * 3 + ch] =
                static_cast<uint8_t>(std::lround(palette[color_idx][static_cast<size_t>(ch)] * shade));
    }
    return img;
}

} // namespace refblend
