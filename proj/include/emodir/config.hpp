#pragma once

#include <cstdint>
#include <string>

#include "emodir/denoiser.hpp"
#include "emodir/dpo.hpp"
#include "emodir/mc_agent.hpp"

namespace emodir {

// One declarative bag of every knob, loadable from a JSON file. Unknown
// keys are rejected; the resolved config hash is logged by every CLI run so
// outputs can be traced back to their exact settings.
struct Config {
    // feature providers
    int d_text = 32;
    int d_visual = 48;
    uint64_t text_seed = 11;
    uint64_t visual_seed = 22;
    uint64_t xmodal_seed = 33;

    // prompt bank
    int bank_clusters = 32;  // L
    int cond_tokens = 8;     // retrieved tokens per prompt

    // denoiser
    int image_size = 16;
    int patch = 4;
    int d_hidden = 64;
    int d_ff = 256;
    int n_blocks = 2;
    int lora_rank = 4;

    // schedule
    int timesteps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.06;

    // trainer
    double dpo_beta = 5000.0;
    double omega = 1.0;
    double learning_rate = 1e-5;
    double warmup_fraction = 0.25;
    int batch_size = 16;
    int ref_batch_size = 64;
    int steps = 2000;

    // rewriting thresholds / scorer knobs
    double semantic_min = 0.5;
    double emotion_min = 0.5;
    double abstractness_max = 0.5;
    double visual_min = 0.2;
    int max_tokens = 70;
    int probes = 4;
    int probe_steps = 16;

    // data files
    std::string lexicon_dir = "data/lexicons";
    std::string abstract_words_path = "data/abstract_words.txt";

    ModelConfig model_config() const;
    TrainerConfig trainer_config(uint64_t seed) const;
    CheckThresholds thresholds() const;
    DefaultScorerConfig scorer_config() const;

    // Merges the JSON file over the defaults; unknown keys raise ParseError.
    void apply_json_file(const std::string& path);
    std::string to_json() const;  // canonical, key-sorted
    uint64_t hash() const;
};

}  // namespace emodir
