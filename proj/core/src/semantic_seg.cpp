#include "refblend/semantic_seg.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "refblend/numerics.hpp"

namespace refblend {

void TokenGrouping::validate(int prompt_len) const {
    std::set<int> seen;
    for (const auto& group : concept_tokens) {
        if (group.empty()) throw UsageError("bad_grouping", "concept token set is empty");
        for (int idx : group) {
            if (idx < 0 || idx >= prompt_len)
                throw UsageError("bad_grouping", "token index " + std::to_string(idx) +
                                                     " outside prompt of length " + std::to_string(prompt_len));
            if (!seen.insert(idx).second)
                throw UsageError("bad_grouping", "token index " + std::to_string(idx) +
                                                     " claimed by two concepts");
        }
    }
}

int TokenGrouping::label_for_token(int token_index) const {
    for (size_t i = 0; i < concept_tokens.size(); ++i) {
        const auto& group = concept_tokens[i];
        if (std::find(group.begin(), group.end(), token_index) != group.end())
            return static_cast<int>(i) + 1;
    }
    return 0;
}

namespace {

int square_side(int hw, const char* what) {
    int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(hw))));
    if (side * side != hw)
        throw UsageError("shape_mismatch", std::string(what) + ": map rows must form a square resolution");
    return side;
}

void require_row_stochastic(const Tensor& m, const char* what) {
    for (int i = 0; i < m.dim(0); ++i) {
        double sum = 0.0;
        for (int j = 0; j < m.dim(1); ++j) {
            double v = m(i, j);
            if (v < -1e-12) throw UsageError("bad_map", std::string(what) + ": negative entry");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-4)
            throw UsageError("bad_map", std::string(what) + ": rows must sum to 1");
    }
}

} // namespace

Tensor aggregate_cross(const std::vector<Tensor>& maps, int target_h, int target_w) {
    if (maps.empty()) throw UsageError("bad_map", "aggregate_cross: need at least one map");
    int K = maps.front().dim(1);
    Tensor acc({target_h * target_w, K});
    for (const Tensor& m : maps) {
        if (m.rank() != 2 || m.dim(1) != K)
            throw UsageError("shape_mismatch", "aggregate_cross: token dimensions differ");
        require_row_stochastic(m, "aggregate_cross");
        int side = square_side(m.dim(0), "aggregate_cross");
        for (int tok = 0; tok < K; ++tok) {
            Tensor plane({side, side});
            for (int i = 0; i < side * side; ++i) plane.data[static_cast<size_t>(i)] = m(i, tok);
            Tensor up = resize_bilinear(plane, target_h, target_w);
            for (int i = 0; i < target_h * target_w; ++i) acc(i, tok) += up.data[static_cast<size_t>(i)];
        }
    }
    double inv = 1.0 / static_cast<double>(maps.size());
    for (double& v : acc.data) v *= inv;
    return row_normalize(acc);
}

std::vector<Tensor> refine_with_self_attention(const std::vector<Tensor>& self_maps,
                                               const std::vector<Tensor>& cross_maps) {
    if (self_maps.size() != cross_maps.size())
        throw UsageError("shape_mismatch", "refine: layer counts differ");
    std::vector<Tensor> out;
    out.reserve(self_maps.size());
    for (size_t l = 0; l < self_maps.size(); ++l) {
        const Tensor& s = self_maps[l];
        const Tensor& c = cross_maps[l];
        if (s.rank() != 2 || c.rank() != 2 || s.dim(0) != s.dim(1) || s.dim(1) != c.dim(0))
            throw UsageError("shape_mismatch", "refine: need S(hw,hw) and C(hw,K)");
        out.push_back(matmul(s, c));
    }
    return out;
}

SemanticMap segment_latent(const Tensor& c_hat, const TokenGrouping& grouping, int h, int w) {
    if (c_hat.rank() != 2 || c_hat.dim(0) != h * w)
        throw UsageError("shape_mismatch", "segment_latent: rows must equal h*w");
    int K = c_hat.dim(1);
    grouping.validate(K);
    SemanticMap map;
    map.h = h;
    map.w = w;
    map.labels.resize(static_cast<size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) {
        int best = 0;
        double best_v = c_hat(i, 0);
        if (best_v < 0) throw UsageError("bad_map", "segment_latent: negative entry");
        for (int tok = 1; tok < K; ++tok) {
            double v = c_hat(i, tok);
            if (v < 0) throw UsageError("bad_map", "segment_latent: negative entry");
            if (v > best_v) { // strict: ties keep the lowest token index
                best_v = v;
                best = tok;
            }
        }
        map.labels[static_cast<size_t>(i)] = grouping.label_for_token(best);
    }
    return map;
}

SemanticMap downsample_majority(const SemanticMap& map, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1 || map.h % out_h != 0 || map.w % out_w != 0)
        throw UsageError("shape_mismatch", "downsample_majority: needs integer factors");
    int fy = map.h / out_h, fx = map.w / out_w;
    SemanticMap out;
    out.h = out_h;
    out.w = out_w;
    out.labels.resize(static_cast<size_t>(out_h) * out_w);
    int max_label = 0;
    for (int l : map.labels) max_label = std::max(max_label, l);
    std::vector<int> counts(static_cast<size_t>(max_label) + 1);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            std::fill(counts.begin(), counts.end(), 0);
            for (int dy = 0; dy < fy; ++dy)
                for (int dx = 0; dx < fx; ++dx)
                    ++counts[static_cast<size_t>(map.label(y * fy + dy, x * fx + dx))];
            int best = 0;
            for (size_t l = 1; l < counts.size(); ++l)
                if (counts[l] > counts[static_cast<size_t>(best)]) best = static_cast<int>(l);
            out.labels[static_cast<size_t>(y) * out_w + x] = best;
        }
    }
    return out;
}

Tensor aggregated_cross_for_layers(const AttnRecord& record, const std::vector<int>& layers,
                                   bool use_refinement, int* target_out) {
    if (layers.empty()) throw UsageError("bad_config", "no attention layers given");
    std::vector<Tensor> self_maps, cross_maps;
    int target = 0;
    for (int l : layers) {
        auto it = record.layers.find(l);
        if (it == record.layers.end())
            throw UsageError("bad_config", "layer " + std::to_string(l) + " missing from record");
        self_maps.push_back(it->second.self_map);
        cross_maps.push_back(it->second.cross_map);
        target = std::max(target, it->second.h);
    }
    std::vector<Tensor> maps =
        use_refinement ? refine_with_self_attention(self_maps, cross_maps) : cross_maps;
    if (target_out) *target_out = target;
    return aggregate_cross(maps, target, target);
}

SemanticMap build_semantic_map(const AttnRecord& record, const std::vector<int>& layers,
                               const TokenGrouping& grouping, bool use_refinement) {
    int target = 0;
    Tensor agg = aggregated_cross_for_layers(record, layers, use_refinement, &target);
    return segment_latent(agg, grouping, target, target);
}

} // namespace refblend
