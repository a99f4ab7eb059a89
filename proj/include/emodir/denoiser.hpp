#pragma once

#include <string>
#include <vector>

#include "emodir/attention.hpp"
#include "emodir/embeddings.hpp"
#include "emodir/image.hpp"
#include "emodir/prompt_bank.hpp"
#include "emodir/schedule.hpp"

namespace emodir {

// Toy token-based noise predictor: patchify, add a sinusoidal timestep
// embedding, run pre-norm blocks of [self-attention, dual text/visual
// cross-attention, feed-forward], unpatchify.
struct ModelConfig {
    int image_size = 16;
    int channels = 3;
    int patch = 4;
    int d_hidden = 64;
    int d_ff = 256;
    int n_blocks = 2;
    int lora_rank = 4;
    int d_text = 32;
    int d_visual = 48;
    int cond_tokens = 8;

    int tokens_per_side() const { return image_size / patch; }
    int n_tokens() const { return tokens_per_side() * tokens_per_side(); }
    int patch_dim() const { return patch * patch * channels; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct SelfAttnWeights {
    Matrix wq, wk, wv, wo;
};

struct FeedForwardWeights {
    Matrix w1, b1, w2, b2;
};

struct DenoiserBlock {
    Matrix norm1, norm2, norm3;  // 1×d_hidden gains
    SelfAttnWeights self_attn;
    DualAttentionWeights cross;
    FeedForwardWeights ff;
};

enum class ParamRole { Base, LoraA, LoraB, VisualIn };

// The guidance bundle: a fixed number of per-token text embeddings plus the
// retrieved visual prompt. Both token counts must equal cond_tokens.
struct Condition {
    Matrix text_tokens;   // cond_tokens × d_text
    VisualPrompt visual;  // tokens: cond_tokens × d_visual
    int emotion = -1;

    bool empty() const { return text_tokens.rows == 0; }
};

// Whitespace tokens of the prompt embedded one by one, truncated or padded
// (with the embedding of a fixed pad marker) to n_tokens rows.
Matrix build_text_tokens(const TextEncoder& enc, const std::string& prompt, int n_tokens);

struct DenoiserModel {
    ModelConfig cfg;
    Matrix patch_w, patch_b;
    std::vector<DenoiserBlock> blocks;
    Matrix final_norm;
    Matrix unembed_w, unembed_b;

    // Fresh model: Gaussian base weights, zero LoRA input matrices (B), so
    // the visual branch contributes exactly nothing until trained.
    static DenoiserModel init(const ModelConfig& cfg, uint64_t seed);
    // Same structure, all parameters zero; used as a gradient buffer.
    static DenoiserModel zeros(const ModelConfig& cfg);

    size_t param_count() const;

    template <class F>
    void visit(F&& fn) {
        visit_impl(*this, fn);
    }
    template <class F>
    void visit(F&& fn) const {
        visit_impl(*this, fn);
    }

private:
    template <class Self, class F>
    static void visit_impl(Self& self, F& fn);
};

struct BlockCache {
    RmsNormCache n1, n2, n3;
    Matrix xn1;
    AttnCache self_attn;
    Matrix self_attn_out;  // pre-output-projection
    DualAttnCache cross;
    Matrix xn3;
    Matrix ff_u, ff_s;
};

struct DenoiserCache {
    int t = 0;
    Matrix patches;
    std::vector<BlockCache> blocks;
    RmsNormCache final_n;
    Matrix x_final;
};

// Deterministic eps prediction; shape of the result equals the input.
// Throws InvalidInput on a missing/mismatched condition.
Image predict_noise(const DenoiserModel& m, const Image& x_t, int t, const Condition& cond,
                    DenoiserCache* cache = nullptr);

// Accumulates parameter gradients into `grads` (a zeros() clone of the
// model); when d_visual_tokens is non-null, also accumulates the gradient
// w.r.t. the condition's visual tokens (cond_tokens × d_visual).
void predict_noise_backward(const DenoiserModel& m, const DenoiserCache& cache,
                            const Image& d_eps, DenoiserModel& grads,
                            Matrix* d_visual_tokens = nullptr);

// Ancestral sampling from pure noise; the final image is clamped to [-1, 1].
Image sample(const DenoiserModel& m, const Condition& cond, const NoiseSchedule& sched,
             uint64_t seed);

// Checkpoint file: magic "EDCK", version, config block, then the named
// parameter tensors in visit order as row-major f32.
void save_checkpoint(const std::string& path, const DenoiserModel& m);
DenoiserModel load_checkpoint(const std::string& path);

// --- template bodies ---

template <class Self, class F>
void DenoiserModel::visit_impl(Self& self, F& fn) {
    fn("patch.w", ParamRole::Base, self.patch_w);
    fn("patch.b", ParamRole::Base, self.patch_b);
    for (size_t i = 0; i < self.blocks.size(); ++i) {
        auto& blk = self.blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        fn(p + "norm1", ParamRole::Base, blk.norm1);
        fn(p + "self.wq", ParamRole::Base, blk.self_attn.wq);
        fn(p + "self.wk", ParamRole::Base, blk.self_attn.wk);
        fn(p + "self.wv", ParamRole::Base, blk.self_attn.wv);
        fn(p + "self.wo", ParamRole::Base, blk.self_attn.wo);
        fn(p + "norm2", ParamRole::Base, blk.norm2);
        fn(p + "cross.wq", ParamRole::Base, blk.cross.wq);
        fn(p + "cross.wk", ParamRole::Base, blk.cross.wk);
        fn(p + "cross.wv", ParamRole::Base, blk.cross.wv);
        fn(p + "cross.aq", ParamRole::LoraA, blk.cross.aq);
        fn(p + "cross.ak", ParamRole::LoraA, blk.cross.ak);
        fn(p + "cross.av", ParamRole::LoraA, blk.cross.av);
        fn(p + "cross.bq", ParamRole::LoraB, blk.cross.bq);
        fn(p + "cross.bk", ParamRole::LoraB, blk.cross.bk);
        fn(p + "cross.bv", ParamRole::LoraB, blk.cross.bv);
        fn(p + "cross.text_in", ParamRole::Base, blk.cross.text_in);
        fn(p + "cross.visual_in", ParamRole::VisualIn, blk.cross.visual_in);
        fn(p + "norm3", ParamRole::Base, blk.norm3);
        fn(p + "ff.w1", ParamRole::Base, blk.ff.w1);
        fn(p + "ff.b1", ParamRole::Base, blk.ff.b1);
        fn(p + "ff.w2", ParamRole::Base, blk.ff.w2);
        fn(p + "ff.b2", ParamRole::Base, blk.ff.b2);
    }
    fn("final_norm", ParamRole::Base, self.final_norm);
    fn("unembed.w", ParamRole::Base, self.unembed_w);
    fn("unembed.b", ParamRole::Base, self.unembed_b);
}

}  // namespace emodir
