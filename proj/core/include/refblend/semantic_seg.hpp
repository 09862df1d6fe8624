#pragma once

#include <vector>

#include "refblend/tensor.hpp"
#include "refblend/unet.hpp"

namespace refblend {

// Which prompt token positions name each concept. Concept labels are
// 1-based; every position not claimed by a concept belongs to the
// background label 0.
struct TokenGrouping {
    std::vector<std::vector<int>> concept_tokens;

    int n_concepts() const { return static_cast<int>(concept_tokens.size()); }
    void validate(int prompt_len) const; // nonempty, disjoint, in range
    int label_for_token(int token_index) const;
};

// Per-patch concept labels in {0..N} at a tagged resolution.
struct SemanticMap {
    int h = 0, w = 0;
    std::vector<int> labels;

    int label(int y, int x) const { return labels[static_cast<size_t>(y) * w + x]; }
};

// Upsample each (hw_l, K) cross-attention map to the target resolution
// (bilinear, per token column), average elementwise, renormalize rows.
// Maps must be square-resolution and row-stochastic.
Tensor aggregate_cross(const std::vector<Tensor>& maps, int target_h, int target_w);

// Per layer: C_hat = S * C. Both inputs row-stochastic; so is the result.
std::vector<Tensor> refine_with_self_attention(const std::vector<Tensor>& self_maps,
                                               const std::vector<Tensor>& cross_maps);

// Per-patch argmax over the token axis (ties to the lowest token index),
// then concept retention: argmax token inside concept i's set -> label i,
// anything else -> background 0.
SemanticMap segment_latent(const Tensor& c_hat, const TokenGrouping& grouping, int h, int w);

// Majority-vote label downsampling by an integer factor; ties to the
// lowest label.
SemanticMap downsample_majority(const SemanticMap& map, int out_h, int out_w);

// Aggregated (hw,K) map over the given layers at the finest of their
// resolutions (written to *target_out), optionally refined per layer first.
Tensor aggregated_cross_for_layers(const AttnRecord& record, const std::vector<int>& layers,
                                   bool use_refinement, int* target_out);

// Full per-step map from a denoise record: (optionally) refine each hooked
// layer's cross map with its self map, aggregate at the finest hooked
// resolution, segment.
SemanticMap build_semantic_map(const AttnRecord& record, const std::vector<int>& layers,
                               const TokenGrouping& grouping, bool use_refinement);

} // namespace refblend
