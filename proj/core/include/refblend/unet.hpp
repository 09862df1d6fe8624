#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "refblend/autograd.hpp"
#include "refblend/rng.hpp"
#include "refblend/tensor.hpp"

namespace refblend {

// Token id 0 is reserved: the unconditional prompt is the lone null token.
constexpr int kNullToken = 0;

// Small encoder/decoder denoiser. Block inventory for L levels is
// 2L+1 numbered blocks: encoders 0..L-1, middle L, decoders L+1..2L,
// with additive skips between mirrored levels. Blocks listed in
// attn_layers carry a self-attention + cross-attention pair.
struct UNetConfig {
    int image_size = 32;
    int base_channels = 16;
    int levels = 3;
    int head_dim = 16;                        // projection width d of every attention layer
    std::vector<int> attn_layers = {1, 2, 3, 4, 5};
    int vocab_size = 7;
    int token_embed_dim = 16;
    int max_tokens = 8;
    int time_embed_dim = 32;
    int norm_groups = 4;
    bool zero_init_out = true;                // zero the last conv of each residual unit and output projections

    int num_blocks() const { return 2 * levels + 1; }
    // Attention at the two coarsest resolution levels (all levels when L == 1).
    static std::vector<int> default_attn_layers(int levels);
    int block_level(int idx) const;
    int block_channels(int idx) const;
    int block_resolution(int idx) const { return image_size >> block_level(idx); }
    int channels_at_level(int level) const { return level == 0 ? base_channels : 2 * base_channels; }
    bool has_attention(int idx) const;
    void validate() const;
};

struct Param {
    std::string name;
    Tensor value;
};

struct UNetModel {
    UNetConfig config;
    std::vector<Param> params;
    std::map<std::string, int> index;

    const Tensor& p(const std::string& name) const;
    Tensor& p(const std::string& name);
    int64_t parameter_count() const;
};

// Per attention layer: raw self-attention projections, the original
// (un-overridden) self-attention map, the cross-attention map, and the
// core output actually used downstream.
struct AttnLayerRecord {
    int h = 0, w = 0;
    Tensor q, k, v;        // (hw, d)
    Tensor self_map;       // (hw, hw), rows sum to 1
    Tensor cross_map;      // (hw, K)
    Tensor self_core;      // (hw, d)
};

struct AttnRecord {
    std::map<int, AttnLayerRecord> layers;
};

// Replaces the self-attention core Softmax(QK^T/sqrt(d))V at the listed
// layers. Receives the layer's raw projections; returns the (hw, d)
// replacement. Inference only.
struct AttnOverride {
    std::vector<int> layers;
    std::function<Tensor(int layer, const Tensor& q, const Tensor& k, const Tensor& v)> fn;
    bool applies_to(int layer) const;
};

struct DenoiseResult {
    Tensor eps;
    AttnRecord record;
};

UNetModel build_unet(const UNetConfig& config, Rng& rng);

// Predict the noise in z_t. Vanilla self-attention unless `override`
// covers a layer. Deterministic for identical inputs.
DenoiseResult denoise(const UNetModel& model, const Tensor& z_t, int t,
                      const std::vector<int>& tokens, const AttnOverride* override_hook = nullptr);

// Training-path forward: records the graph on `tape` and reports the tape
// node ids of the parameters (in model.params order) through `param_nodes`.
// No hooks and no attention record.
ag::Val forward_train(const UNetModel& model, ag::Tape& tape, const Tensor& z_t, int t,
                      const std::vector<int>& tokens, std::vector<int>& param_nodes);

} // namespace refblend
