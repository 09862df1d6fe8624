#include "refblend/attention_control.hpp"

#include <cmath>
#include <limits>

#include "refblend/numerics.hpp"

namespace refblend {

void ReferenceConcept::validate(int image_size) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image_size || image.dim(2) != image_size)
        throw DataError("bad_reference", "reference image must be (3," + std::to_string(image_size) +
                                             "," + std::to_string(image_size) + ")");
    if (mask.rank() != 2 || mask.dim(0) != image_size || mask.dim(1) != image_size)
        throw DataError("bad_reference", "mask must match the image spatial size");
    for (double v : mask.data)
        if (v != 0.0 && v != 1.0)
            throw DataError("bad_reference", "mask must be exactly {0,1}-valued");
    if (!(weight > 0.0)) throw DataError("bad_reference", "concept weight must be positive");
    if (tokens.empty()) throw DataError("bad_reference", "reference prompt must be nonempty");
}

void KVCache::put(int layer, int t, int concept_index, KVEntry kv) {
    table_[std::make_tuple(layer, t, concept_index)] = std::move(kv);
}

const KVEntry& KVCache::at(int layer, int t, int concept_index) const {
    auto it = table_.find(std::make_tuple(layer, t, concept_index));
    if (it == table_.end())
        throw UsageError("cache_miss", "no cached K/V for layer " + std::to_string(layer) + ", t=" +
                                           std::to_string(t) + ", concept " + std::to_string(concept_index));
    return it->second;
}

bool KVCache::has(int layer, int t, int concept_index) const {
    return table_.count(std::make_tuple(layer, t, concept_index)) > 0;
}

bool KVCache::complete(const std::vector<int>& layers, const std::vector<int>& timesteps,
                       int n_concepts) const {
    for (int l : layers)
        for (int t : timesteps)
            for (int i = 0; i < n_concepts; ++i)
                if (!has(l, t, i)) return false;
    return true;
}

MaskLogits prepare_mask_logits(const Tensor& mask, double weight,
                               const std::vector<LayerResolution>& resolutions) {
    if (mask.rank() != 2) throw UsageError("shape_mismatch", "mask must be rank-2");
    for (double v : mask.data)
        if (v != 0.0 && v != 1.0) throw DataError("bad_reference", "mask must be exactly {0,1}-valued");
    if (!(weight > 0.0)) throw UsageError("bad_weight", "mask weight must be positive");

    int H = mask.dim(0), W = mask.dim(1);
    MaskLogits out;
    out.weight = weight;
    for (const LayerResolution& res : resolutions) {
        if (res.h < 1 || res.w < 1 || H % res.h != 0 || W % res.w != 0)
            throw UsageError("shape_mismatch", "mask downsampling needs integer factors");
        int fy = H / res.h, fx = W / res.w;
        Tensor row({res.h * res.w});
        int on_count = 0;
        for (int y = 0; y < res.h; ++y) {
            for (int x = 0; x < res.w; ++x) {
                int covered = 0;
                for (int dy = 0; dy < fy; ++dy)
                    for (int dx = 0; dx < fx; ++dx)
                        if (mask(y * fy + dy, x * fx + dx) != 0.0) ++covered;
                bool on = 2 * covered >= fy * fx; // fraction >= 0.5
                if (on) {
                    row(y * res.w + x) = weight;
                    ++on_count;
                }
            }
        }
        if (on_count == 0)
            throw DataError("degenerate_mask", "concept mask vanishes at layer " +
                                                   std::to_string(res.layer) + " (" + std::to_string(res.h) +
                                                   "x" + std::to_string(res.w) + ")");
        out.rows[res.layer] = std::move(row);
    }
    return out;
}

KVCache extract_reference_kv(const UNetModel& model, const std::vector<ReferenceConcept>& refs,
                             const NoiseSchedule& sched, const std::vector<int>& timesteps,
                             const std::vector<int>& layers, Rng& rng) {
    KVCache cache;
    if (refs.empty()) return cache;
    for (int l : layers) {
        if (!model.config.has_attention(l))
            throw UsageError("bad_config", "layer " + std::to_string(l) + " has no attention");
    }
    for (int t : timesteps)
        if (t < 1 || t > sched.T) throw UsageError("step_range", "reference timestep outside schedule");

    for (size_t i = 0; i < refs.size(); ++i) {
        const ReferenceConcept& ref = refs[i];
        ref.validate(model.config.image_size);
        Tensor eps = gaussian(rng, ref.image.shape); // one draw per concept, reused at every t
        for (int t : timesteps) {
            Tensor z = forward_diffuse(ref.image, t, eps, sched);
            DenoiseResult res = denoise(model, z, t, ref.tokens);
            for (int l : layers) {
                const AttnLayerRecord& lr = res.record.layers.at(l);
                cache.put(l, t, static_cast<int>(i), KVEntry{lr.k, lr.v});
            }
        }
    }
    return cache;
}

namespace {

// Masked concatenated attention shared by rsa and the per-group rba body.
// blocks: (K_i, V_i, mask_row or nullptr) appended after the latent block.
Tensor masked_concat_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                               const std::vector<const KVEntry*>& ref_kv,
                               const std::vector<const Tensor*>& mask_rows, int head_dim,
                               bool strict_mask) {
    int nq = q.dim(0), d = q.dim(1);
    if (d != head_dim) throw UsageError("shape_mismatch", "query width differs from head dim");
    if (k.dim(1) != d || v.dim(1) != d || k.dim(0) != v.dim(0))
        throw UsageError("shape_mismatch", "K/V do not match the head dim");

    int total = k.dim(0);
    for (size_t i = 0; i < ref_kv.size(); ++i) {
        const KVEntry& e = *ref_kv[i];
        if (e.k.dim(1) != d || e.v.dim(1) != d || e.k.dim(0) != e.v.dim(0))
            throw UsageError("shape_mismatch", "reference K/V do not match the head dim");
        if (mask_rows[i] && mask_rows[i]->numel() != e.k.dim(0))
            throw UsageError("shape_mismatch", "mask row length does not match reference keys");
        total += e.k.dim(0);
    }

    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Tensor logits({nq, total});

    Tensor own = matmul_nt(q, k);
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < k.dim(0); ++j) logits(i, j) = own(i, j);

    int col = k.dim(0);
    for (size_t b = 0; b < ref_kv.size(); ++b) {
        Tensor block = matmul_nt(q, ref_kv[b]->k);
        int cols = block.dim(1);
        const Tensor* m = mask_rows[b];
        for (int i = 0; i < nq; ++i) {
            for (int j = 0; j < cols; ++j) {
                double l = block(i, j);
                if (m) {
                    double mv = (*m)(j);
                    if (strict_mask && mv == 0.0)
                        l = -std::numeric_limits<double>::infinity();
                    else
                        l = mv * l;
                }
                logits(i, col + j) = l;
            }
        }
        col += cols;
    }

    for (double& x : logits.data) x *= inv_sqrt_d;
    Tensor attn = softmax(logits, 1);

    Tensor out({nq, d});
    // own block
    for (int i = 0; i < nq; ++i) {
        const double* arow = attn.data.data() + static_cast<size_t>(i) * total;
        double* orow = out.data.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < k.dim(0); ++j) {
            double w = arow[j];
            const double* vrow = v.data.data() + static_cast<size_t>(j) * d;
            for (int p = 0; p < d; ++p) orow[p] += w * vrow[p];
        }
    }
    col = k.dim(0);
    for (const KVEntry* e : ref_kv) {
        int rows = e->k.dim(0);
        for (int i = 0; i < nq; ++i) {
            const double* arow = attn.data.data() + static_cast<size_t>(i) * total + col;
            double* orow = out.data.data() + static_cast<size_t>(i) * d;
            for (int j = 0; j < rows; ++j) {
                double w = arow[j];
                const double* vrow = e->v.data.data() + static_cast<size_t>(j) * d;
                for (int p = 0; p < d; ++p) orow[p] += w * vrow[p];
            }
        }
        col += rows;
    }
    check_finite(out, "attention");
    return out;
}

} // namespace

Tensor rsa(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<KVEntry>& ref_kv,
           const std::vector<Tensor>& mask_rows, int head_dim, bool strict_mask) {
    if (ref_kv.size() != mask_rows.size())
        throw UsageError("shape_mismatch", "rsa: one mask row per concept required");
    std::vector<const KVEntry*> kv;
    std::vector<const Tensor*> masks;
    for (size_t i = 0; i < ref_kv.size(); ++i) {
        kv.push_back(&ref_kv[i]);
        masks.push_back(&mask_rows[i]);
    }
    return masked_concat_attention(q, k, v, kv, masks, head_dim, strict_mask);
}

Tensor rba(const Tensor& q, const Tensor& k, const Tensor& v, const std::vector<KVEntry>& ref_kv,
           const SemanticMap& semantic_map, const std::vector<Tensor>& mask_rows, int head_dim,
           bool strict_mask) {
    int nq = q.dim(0);
    int n_concepts = static_cast<int>(ref_kv.size());
    if (static_cast<int>(mask_rows.size()) != n_concepts)
        throw UsageError("shape_mismatch", "rba: one mask row per concept required");
    if (semantic_map.h * semantic_map.w != nq)
        throw UsageError("shape_mismatch", "rba: semantic map resolution must match queries");
    for (int label : semantic_map.labels)
        if (label < 0 || label > n_concepts)
            throw UsageError("label_range", "semantic label " + std::to_string(label) +
                                                " exceeds concept count " + std::to_string(n_concepts));

    std::vector<std::vector<int>> groups(static_cast<size_t>(n_concepts) + 1);
    for (int i = 0; i < nq; ++i)
        groups[static_cast<size_t>(semantic_map.labels[static_cast<size_t>(i)])].push_back(i);

    int d = q.dim(1);
    Tensor out({nq, d});
    std::vector<int> write_count(static_cast<size_t>(nq), 0);

    for (int label = 0; label <= n_concepts; ++label) {
        const std::vector<int>& idx = groups[static_cast<size_t>(label)];
        if (idx.empty()) continue; // concept absent this step: no injection for it

        Tensor qg({static_cast<int>(idx.size()), d});
        for (size_t r = 0; r < idx.size(); ++r)
            for (int p = 0; p < d; ++p) qg(static_cast<int>(r), p) = q(idx[r], p);

        Tensor og;
        if (label == 0) {
            og = masked_concat_attention(qg, k, v, {}, {}, head_dim, strict_mask);
        } else {
            const KVEntry* e = &ref_kv[static_cast<size_t>(label - 1)];
            const Tensor* m = &mask_rows[static_cast<size_t>(label - 1)];
            og = masked_concat_attention(qg, k, v, {e}, {m}, head_dim, strict_mask);
        }
        for (size_t r = 0; r < idx.size(); ++r) {
            for (int p = 0; p < d; ++p) out(idx[r], p) = og(static_cast<int>(r), p);
            ++write_count[static_cast<size_t>(idx[r])];
        }
    }
    for (int c : write_count)
        if (c != 1) throw NumericError("blend_bijection", "output pixel written " + std::to_string(c) + " times");
    return out;
}

} // namespace refblend
