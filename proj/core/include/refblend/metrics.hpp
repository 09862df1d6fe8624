#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refblend/attention_control.hpp"
#include "refblend/semantic_seg.hpp"
#include "refblend/tensor.hpp"

namespace refblend {

struct ConceptScores {
    bool defined = false;    // false when the generated region is empty
    int region_pixels = 0;
    double color_distance = 0.0; // L2 between region mean color and reference masked mean, [0,1] space
    double patch_cosine = 0.0;   // mean pairwise cosine over normalized 2x2 patch vectors
};

// Region = pixels of `generated` whose (nearest-upsampled) semantic label
// equals `label`; compared against the reference under its own mask.
ConceptScores concept_fidelity(const Tensor& generated, const SemanticMap& map, int label,
                               const ReferenceConcept& ref);

struct MetricsReport {
    uint64_t seed = 0;
    std::vector<ConceptScores> concepts;
    std::vector<std::optional<double>> baseline_color_distance; // per concept, when a baseline ran
    std::vector<std::optional<double>> baseline_patch_cosine;
    std::string config_echo; // serialized run configuration
};

std::string metrics_to_json(const MetricsReport& report);

} // namespace refblend
