#include "refblend/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "refblend/numerics.hpp"

namespace refblend {

const char* stage_name(Stage s) { return s == Stage::RSA ? "RSA" : "RBA"; }

int rsa_step_count(double alpha, int T) {
    if (alpha < 0.0 || alpha > 1.0) throw UsageError("bad_config", "alpha must be in [0,1]");
    if (T < 1) throw UsageError("bad_config", "T must be >= 1");
    // Guard against 0.4*50 -> 20.0000000000000004 flipping the ceiling.
    int n = static_cast<int>(std::ceil(alpha * static_cast<double>(T) - 1e-9));
    return std::clamp(n, 0, T);
}

Stage stage_for_step(int step_index, double alpha, int T) {
    if (step_index < 0 || step_index >= T)
        throw UsageError("step_range", "step index outside 0..T-1");
    return step_index < rsa_step_count(alpha, T) ? Stage::RSA : Stage::RBA;
}

void PipelineConfig::validate(const UNetModel& model) const {
    if (steps < 1) throw UsageError("bad_config", "steps must be >= 1");
    if (alpha < 0.0 || alpha > 1.0) throw UsageError("bad_config", "alpha must be in [0,1]");
    if (cfg_scale < 0.0) throw UsageError("bad_config", "cfg_scale must be >= 0");
    if (hooked_layers.empty()) throw UsageError("bad_config", "at least one hooked layer required");
    for (int l : hooked_layers)
        if (!model.config.has_attention(l))
            throw UsageError("bad_config", "hooked layer " + std::to_string(l) +
                                               " is not an attention layer of this model");
    if (seg_ema < 0.0 || seg_ema >= 1.0) throw UsageError("bad_config", "seg_ema must be in [0,1)");
}

namespace {

std::vector<LayerResolution> hooked_resolutions(const UNetModel& model,
                                                const std::vector<int>& layers) {
    std::vector<LayerResolution> out;
    for (int l : layers) {
        int r = model.config.block_resolution(l);
        out.push_back(LayerResolution{l, r, r});
    }
    return out;
}

} // namespace

GenerationArtifacts generate(const UNetModel& model, const std::vector<ReferenceConcept>& refs,
                             const std::vector<int>& prompt_tokens, const TokenGrouping& grouping,
                             const PipelineConfig& config, const NoiseSchedule& sched) {
    config.validate(model);
    grouping.validate(static_cast<int>(prompt_tokens.size()));
    if (grouping.n_concepts() != static_cast<int>(refs.size()))
        throw UsageError("bad_grouping", "grouping names " + std::to_string(grouping.n_concepts()) +
                                             " concepts but " + std::to_string(refs.size()) +
                                             " references were given");

    const int n_concepts = static_cast<int>(refs.size());
    const int S = model.config.image_size;
    std::vector<int> timesteps = sample_timesteps(sched, config.steps);

    Rng root(config.seed);
    Rng rng_ref = root.fork(1);
    Rng rng_latent = root.fork(2);

    // Reference path.
    KVCache cache;
    std::vector<MaskLogits> mask_logits;
    bool inject = config.injection_enabled && n_concepts > 0;
    if (n_concepts > 0) {
        cache = extract_reference_kv(model, refs, sched, timesteps, config.hooked_layers, rng_ref);
        auto resolutions = hooked_resolutions(model, config.hooked_layers);
        for (const ReferenceConcept& ref : refs)
            mask_logits.push_back(prepare_mask_logits(ref.mask, ref.weight, resolutions));
    }

    const std::vector<int> uncond_tokens = {kNullToken};

    GenerationArtifacts art;
    art.concept_diag.assign(static_cast<size_t>(n_concepts), ConceptDiagnostics{});

    Tensor z = gaussian(rng_latent, {3, S, S});
    Tensor ema_map; // aggregated (hw,K) map carried across RBA steps
    int ema_res = 0;

    for (int k = 0; k < config.steps; ++k) {
        int t = timesteps[static_cast<size_t>(k)];
        int t_prev = (k + 1 < config.steps) ? timesteps[static_cast<size_t>(k) + 1] : 0;
        Stage stage = stage_for_step(k, config.alpha, config.steps);

        StepInfo info;
        info.index = k;
        info.t = t;
        info.t_prev = t_prev;
        info.stage = stage;

        // Stage-2 segmentation: a vanilla conditional pass supplies this
        // step's original attention maps before any override runs.
        std::map<int, SemanticMap> layer_maps;
        if (stage == Stage::RBA && n_concepts > 0) {
            DenoiseResult map_pass = denoise(model, z, t, prompt_tokens, nullptr);
            int target = 0;
            Tensor agg = aggregated_cross_for_layers(map_pass.record, config.hooked_layers,
                                                     config.use_refined_seg, &target);
            if (config.seg_ema > 0.0 && ema_res == target) {
                for (int64_t i = 0; i < agg.numel(); ++i)
                    agg.data[static_cast<size_t>(i)] =
                        config.seg_ema * ema_map.data[static_cast<size_t>(i)] +
                        (1.0 - config.seg_ema) * agg.data[static_cast<size_t>(i)];
            }
            if (config.seg_ema > 0.0) {
                ema_map = agg;
                ema_res = target;
            }
            SemanticMap finest = segment_latent(agg, grouping, target, target);
            info.has_semantic_map = true;
            info.semantic_map = finest;

            info.group_sizes.assign(static_cast<size_t>(n_concepts) + 1, 0);
            for (int label : finest.labels) ++info.group_sizes[static_cast<size_t>(label)];
            for (int i = 0; i < n_concepts; ++i)
                if (info.group_sizes[static_cast<size_t>(i) + 1] > 0)
                    ++art.concept_diag[static_cast<size_t>(i)].steps_present;

            for (int l : config.hooked_layers) {
                int r = model.config.block_resolution(l);
                layer_maps[l] = (r == target) ? finest : downsample_majority(finest, r, r);
            }
        }

        AttnOverride hook;
        const AttnOverride* cond_hook = nullptr;
        if (inject) {
            hook.layers = config.hooked_layers;
            hook.fn = [&](int layer, const Tensor& q, const Tensor& kk, const Tensor& vv) {
                std::vector<KVEntry> kv;
                std::vector<Tensor> rows;
                for (int i = 0; i < n_concepts; ++i) {
                    kv.push_back(cache.at(layer, t, i));
                    rows.push_back(mask_logits[static_cast<size_t>(i)].rows.at(layer));
                }
                if (stage == Stage::RSA)
                    return rsa(q, kk, vv, kv, rows, model.config.head_dim, config.strict_mask);
                return rba(q, kk, vv, kv, layer_maps.at(layer), rows, model.config.head_dim,
                           config.strict_mask);
            };
            cond_hook = &hook;
        }

        try {
            DenoiseResult cond = denoise(model, z, t, prompt_tokens, cond_hook);
            DenoiseResult uncond =
                denoise(model, z, t, uncond_tokens, config.inject_uncond ? cond_hook : nullptr);
            Tensor eps = cfg_combine(uncond.eps, cond.eps, config.cfg_scale);
            z = ddim_step(z, eps, t, t_prev, sched);
            if (config.keep_records) art.records.push_back(std::move(cond.record));
        } catch (const NumericError& e) {
            throw NumericError(e.code(), std::string(e.what()) + " (sampling step " + std::to_string(k) +
                                             ", t=" + std::to_string(t) + ")");
        }

        art.stage_tags.push_back(stage);
        art.steps.push_back(std::move(info));
    }

    int rba_steps = 0;
    for (Stage s : art.stage_tags)
        if (s == Stage::RBA) ++rba_steps;
    for (auto& diag : art.concept_diag) diag.degenerate = rba_steps > 0 && diag.steps_present == 0;
    art.final_latent = std::move(z);
    return art;
}

Tensor sample_plain(const UNetModel& model, const std::vector<int>& prompt_tokens,
                    const PipelineConfig& config, const NoiseSchedule& sched) {
    config.validate(model);
    const int S = model.config.image_size;
    std::vector<int> timesteps = sample_timesteps(sched, config.steps);

    Rng root(config.seed);
    Rng rng_latent = root.fork(2); // same stream tag as the customization path

    const std::vector<int> uncond_tokens = {kNullToken};
    Tensor z = gaussian(rng_latent, {3, S, S});
    for (int k = 0; k < config.steps; ++k) {
        int t = timesteps[static_cast<size_t>(k)];
        int t_prev = (k + 1 < config.steps) ? timesteps[static_cast<size_t>(k) + 1] : 0;
        Tensor eps_c = denoise(model, z, t, prompt_tokens).eps;
        Tensor eps_u = denoise(model, z, t, uncond_tokens).eps;
        z = ddim_step(z, cfg_combine(eps_u, eps_c, config.cfg_scale), t, t_prev, sched);
    }
    return z;
}

} // namespace refblend
