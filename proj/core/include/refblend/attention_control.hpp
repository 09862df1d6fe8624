#pragma once

#include <map>
#include <tuple>
#include <vector>

#include "refblend/diffusion.hpp"
#include "refblend/rng.hpp"
#include "refblend/semantic_seg.hpp"
#include "refblend/tensor.hpp"
#include "refblend/unet.hpp"

namespace refblend {

// One reference image with its binary mask, its own prompt tokens, and the
// logit-scaling weight applied to its mask.
struct ReferenceConcept {
    Tensor image;            // (3,S,S) in [-1,1]
    Tensor mask;             // (S,S), exactly {0,1}
    std::vector<int> tokens; // reference-path prompt
    double weight = 3.0;

    void validate(int image_size) const;
};

struct KVEntry {
    Tensor k, v; // (hw_l, d)
};

// (layer, timestep, concept) -> reference keys/values. Written once by the
// reference path, read-only during sampling.
class KVCache {
public:
    void put(int layer, int t, int concept_index, KVEntry kv);
    const KVEntry& at(int layer, int t, int concept_index) const;
    bool has(int layer, int t, int concept_index) const;
    bool empty() const { return table_.empty(); }
    size_t size() const { return table_.size(); }
    bool complete(const std::vector<int>& layers, const std::vector<int>& timesteps,
                  int n_concepts) const;

private:
    std::map<std::tuple<int, int, int>, KVEntry> table_;
};

struct LayerResolution {
    int layer;
    int h, w;
};

// One concept's weighted mask row per hooked layer: entries are `weight` on
// concept pixels and 0 elsewhere, after area-fraction downsampling
// (cell on iff covered fraction >= 0.5).
struct MaskLogits {
    double weight = 0.0;
    std::map<int, Tensor> rows; // layer -> (hw_l)
};

MaskLogits prepare_mask_logits(const Tensor& mask, double weight,
                               const std::vector<LayerResolution>& resolutions);

// Run the reference path: noise each concept image (one seeded epsilon per
// concept, reused across timesteps), denoise with vanilla attention, record
// K/V at every requested layer and timestep.
KVCache extract_reference_kv(const UNetModel& model, const std::vector<ReferenceConcept>& refs,
                             const NoiseSchedule& sched, const std::vector<int>& timesteps,
                             const std::vector<int>& layers, Rng& rng);

// Reference-aware self-attention: queries attend over [K, K_1..K_N] with the
// concept logit blocks scaled elementwise by their mask rows (the latent's
// own block by 1), softmax over the concatenated axis, values [V, V_1..V_N].
// strict_mask turns masked-out logits into -inf instead of 0.
Tensor rsa(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<KVEntry>& ref_kv,
           const std::vector<Tensor>& mask_rows, int head_dim, bool strict_mask = false);

// Region-grouped blend attention: queries are grouped by semantic label;
// group 0 attends to its own keys only, group i>0 to [K, K_i] with mask
// [1, w_i M_i]; group outputs are scattered back to their pixel positions
// (each output row written exactly once).
Tensor rba(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<KVEntry>& ref_kv,
           const SemanticMap& semantic_map, const std::vector<Tensor>& mask_rows, int head_dim,
           bool strict_mask = false);

} // namespace refblend
