#pragma once

#include <string>
#include <vector>

#include "emodir/dataset.hpp"
#include "emodir/denoiser.hpp"
#include "emodir/dpo.hpp"
#include "emodir/mc_agent.hpp"

namespace emodir {

struct GenerationRequest {
    std::string prompt;
    int emotion = 0;
    uint64_t seed = 0;
    bool use_rewriter = true;
    bool use_visual_prompt = true;
};

struct Provenance {
    std::string source_prompt;
    std::string final_prompt;  // rewritten prompt actually used for conditioning
    int emotion = 0;
    uint64_t seed = 0;
    bool use_rewriter = false;
    bool use_visual_prompt = false;
    bool rewriter_discarded = false;  // rewrite ran but fell back to the source
    uint64_t session_seed = 0;
    std::vector<int> bank_indices;  // retrieved rows; empty without visual prompt
    uint64_t config_hash = 0;
};

struct GenerationResult {
    Image image;
    Provenance provenance;
};

struct PipelineContext {
    const DenoiserModel* model = nullptr;
    const NoiseSchedule* sched = nullptr;
    const PromptBank* bank = nullptr;
    const TextEncoder* text_enc = nullptr;
    TextBackend* backend = nullptr;        // required only when rewriting
    const CheckScorers* scorers = nullptr; // likewise
    CheckThresholds thresholds;
    uint64_t config_hash = 0;
};

// Rewritten prompt -> bank retrieval -> conditioned sampling, with a full
// provenance record. When the rewriter discards, the source prompt is used
// and flagged. With the visual prompt disabled the condition carries
// all-zero visual tokens, which the low-rank branch maps to exactly nothing.
GenerationResult generate(const PipelineContext& ctx, const GenerationRequest& req);

// Re-runs sampling from a provenance record (the stored final prompt and
// seeds); bit-identical to the original image.
GenerationResult regenerate(const PipelineContext& ctx, const Provenance& prov);

void save_provenance(const std::string& path, const Provenance& prov);
Provenance load_provenance(const std::string& path);

struct EvalConfiguration {
    std::string name;
    bool use_rewriter = false;
    bool use_visual_prompt = false;
};

struct EvalRow {
    std::string config;
    double emotion_accuracy = 0.0;  // hue-band classifier agreement
    double mean_consistency = 0.0;  // stub text-image similarity vs the source prompt
    int count = 0;
};

// Runs every configuration over the same requests (paired seeds), so the
// per-sample noise is identical across configurations.
std::vector<EvalRow> evaluate(const PipelineContext& ctx,
                              const std::vector<GenerationRequest>& requests,
                              const std::vector<EvalConfiguration>& configs,
                              const VisualEncoder& visual_enc, const CrossModalScorer& xmodal);

// Preference records resolved back to in-memory images via the candidate
// groups they were selected from.
std::vector<PreferenceExample> pairs_to_examples(const std::vector<CandidateGroup>& groups,
                                                 const std::vector<PreferencePairRecord>& records);

// Same, but loading images from disk (paths in the records).
std::vector<PreferenceExample> load_preference_examples(const std::string& pref_path);

}  // namespace emodir
