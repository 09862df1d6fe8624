#pragma once

#include <optional>
#include <string>
#include <vector>

#include "refblend/pipeline.hpp"

namespace refblend {

struct ReferenceEntry {
    std::string image_path;
    std::string mask_path;
    std::vector<std::string> tokens; // names, resolved against the vocabulary
    double weight = 3.0;
};

// File form of a generation run (JSON document with a version field).
struct RunConfig {
    int version = 1;
    std::string checkpoint;
    std::vector<std::string> prompt; // token names; the null token is prepended on load
    std::vector<ReferenceEntry> references;
    std::vector<std::vector<int>> grouping; // optional explicit prompt indices per concept

    int steps = 50;
    double alpha = 0.4;
    double cfg_scale = 7.5;
    std::vector<int> blocks = {4, 5};
    uint64_t seed = 0;
    bool strict_mask = false;
    std::string seg_source = "refined"; // or "raw"
    bool inject_uncond = false;
    double seg_ema = 0.0;
    int sched_steps = 1000; // training-time schedule; must match the checkpoint's run
    double sched_beta_min = 1e-4;
    double sched_beta_max = 0.02;
    std::string output_dir;
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);
std::string run_config_to_json(const RunConfig& config);

// Everything generate() needs, resolved from a RunConfig: model loaded,
// token names mapped to ids, grouping derived (explicit indices or the
// occurrences of each reference's tokens in the prompt), reference
// images/masks read from disk.
struct LoadedRun {
    UNetModel model;
    std::vector<int> prompt_tokens; // [null] + prompt ids
    TokenGrouping grouping;
    std::vector<ReferenceConcept> refs;
    PipelineConfig pipeline;
};

LoadedRun assemble_run(const RunConfig& config);

// Output directory resolution: explicit value, else $REFBLEND_OUT_ROOT/run,
// else ./out.
std::string resolve_output_dir(const RunConfig& config);

} // namespace refblend
