#pragma once

#include <array>
#include <vector>

#include "refblend/image_io.hpp"
#include "refblend/semantic_seg.hpp"
#include "refblend/tensor.hpp"

namespace refblend {

// Fixed indexed palette; label 0 renders as neutral gray.
const std::vector<std::array<uint8_t, 3>>& semantic_palette();

// Deterministic color per label at native map resolution. Decoding the
// result recovers the exact label array.
ImageU8 render_semantic_map(const SemanticMap& map);
SemanticMap decode_semantic_map(const ImageU8& img);

// Simple dark-to-warm ramp over [min,max] of the map.
ImageU8 render_heatmap(const Tensor& map2d);

struct Correspondence {
    int concept_index; // 0-based
    int key_position;
};

// Per query row: the (concept, position) of the highest-dot-product
// reference key; ties resolve to the lowest (concept, position).
std::vector<Correspondence> correspondence_map(const Tensor& q, const std::vector<Tensor>& ref_keys);

// Queries colored by matched concept, shaded by matched key position.
ImageU8 render_correspondence(const std::vector<Correspondence>& corr, int h, int w,
                              const std::vector<int>& key_counts);

} // namespace refblend
