#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refblend/attention_control.hpp"
#include "refblend/diffusion.hpp"
#include "refblend/semantic_seg.hpp"
#include "refblend/unet.hpp"

namespace refblend {

enum class Stage { RSA, RBA };

const char* stage_name(Stage s);

// RSA for the first ceil(alpha * T) sampling iterations, RBA for the rest.
Stage stage_for_step(int step_index, double alpha, int T);
int rsa_step_count(double alpha, int T);

struct PipelineConfig {
    int steps = 50;
    double alpha = 0.4;
    double cfg_scale = 7.5;
    std::vector<int> hooked_layers = {4, 5};
    uint64_t seed = 0;
    bool strict_mask = false;       // masked-out reference logits -> -inf instead of 0
    bool use_refined_seg = true;    // segment from S*C instead of raw C
    bool inject_uncond = false;     // also override the unconditional branch
    double seg_ema = 0.0;           // temporal smoothing of the aggregated map; 0 = off
    bool injection_enabled = true;  // false: identical trajectory, no overrides (baseline)
    bool keep_records = false;      // retain per-step conditional attention records

    void validate(const UNetModel& model) const;
};

struct StepInfo {
    int index = 0;
    int t = 0;
    int t_prev = 0;
    Stage stage = Stage::RSA;
    bool has_semantic_map = false;
    SemanticMap semantic_map;        // finest hooked resolution; RBA steps only
    std::vector<int> group_sizes;    // query count per label (background first)
};

struct ConceptDiagnostics {
    int steps_present = 0;  // RBA steps where the concept had a nonempty group
    bool degenerate = false; // never appeared in any stage-2 semantic map
};

struct GenerationArtifacts {
    Tensor final_latent; // (3,S,S)
    std::vector<StepInfo> steps;
    std::vector<Stage> stage_tags;
    std::vector<ConceptDiagnostics> concept_diag;
    std::vector<AttnRecord> records; // conditional pass, when keep_records
};

// Dual-path sampling: reference K/V extraction, then T guided DDIM steps
// with the hooked self-attention layers overridden per stage. With no
// references the trajectory is bit-identical to sample_plain.
GenerationArtifacts generate(const UNetModel& model, const std::vector<ReferenceConcept>& refs,
                             const std::vector<int>& prompt_tokens, const TokenGrouping& grouping,
                             const PipelineConfig& config, const NoiseSchedule& sched);

// Plain classifier-free-guided DDIM sampling, no attention control.
Tensor sample_plain(const UNetModel& model, const std::vector<int>& prompt_tokens,
                    const PipelineConfig& config, const NoiseSchedule& sched);

} // namespace refblend
