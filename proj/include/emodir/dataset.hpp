#pragma once

#include <array>
#include <string>
#include <vector>

#include "emodir/embeddings.hpp"
#include "emodir/image.hpp"
#include "emodir/prompt_bank.hpp"
#include "emodir/rng.hpp"

namespace emodir {

// Toy emotion encoding: emotion e owns the hue band [45e, 45(e+1)) degrees,
// in the fixed Mikels order. Dataset images are a saturated disc (hue inside
// the band) over a neutral gray gradient, so a hue-band readout inverts the
// generator exactly on clean data.

constexpr double kHueBandWidth = 45.0;

int hue_band_of(double hue_degrees);
double hue_band_center(int emotion);

// Saturation-weighted hue-band histogram vote. Images with no saturated
// pixels fall back to the band center nearest the mean hue.
int emotion_classify_toy(const Image& img);

// Fraction of saturated hue mass inside the emotion's band, in [0, 1].
double emotion_band_score(const Image& img, int emotion);

// One toy image: disc hue drawn inside the emotion's band with saturation
// ~0.9 and brightness jitter, background a vertical gray gradient.
Image render_toy_image(int emotion, Rng& rng, int image_size = 16);

struct ToyDataset {
    std::vector<EmbeddingRecord> records;
    std::vector<Image> images;  // parallel to records
};

// Deterministic templated prompts ("a <adj> <object> scene", distinct per
// emotion) with stub-encoder embeddings. n_per_emotion is limited by the
// size of the prompt pool.
ToyDataset build_toy_dataset(int n_per_emotion, uint64_t seed, const TextEncoder& text_enc,
                             const VisualEncoder& visual_enc, int image_size = 16);

int toy_prompt_pool_size();
std::string toy_prompt(int combo);  // combo in [0, toy_prompt_pool_size())

// Candidate scoring. All four metrics live in [0, 1].
struct Scores {
    double aesthetic = 0.0;
    double consistency = 0.0;
    double human_pref = 0.0;
    double emotion = 0.0;

    static constexpr std::array<const char*, 4> key_order{"aesthetic", "consistency",
                                                          "human_pref", "emotion"};
    std::array<double, 4> values() const { return {aesthetic, consistency, human_pref, emotion}; }
    bool all_finite() const;
};

// Stub cross-modal similarity: the text embedding is pushed through a fixed
// seeded projection into the visual space and compared by cosine, mapped to
// [0, 1] as (1 + cos) / 2.
class CrossModalScorer {
public:
    CrossModalScorer(int d_text, int d_visual, uint64_t seed);
    double similarity(const std::vector<double>& text_emb,
                      const std::vector<double>& visual_emb) const;

private:
    Matrix proj_;  // d_visual × d_text
};

Scores score_candidate(const Image& img, const std::string& prompt, int emotion,
                       const TextEncoder& text_enc, const VisualEncoder& visual_enc,
                       const CrossModalScorer& scorer);

struct ScoredCandidate {
    std::string prompt;
    int emotion = 0;
    Image image;
    std::string image_path;
    Scores scores;
};

struct CandidateGroup {
    std::string prompt;
    int emotion = 0;
    std::vector<ScoredCandidate> candidates;
};

struct PreferencePairRecord {
    std::string prompt;
    int emotion = 0;
    std::string chosen_path, rejected_path;
    Scores chosen_scores, rejected_scores;
};

// Within each group, emits every ordered pair where the chosen candidate is
// >= on all four metrics and wins the emotion score by at least 0.2.
// Deterministic order: group order, then chosen index, then rejected index.
// Identical (chosen_path, rejected_path) pairs are deduplicated.
std::vector<PreferencePairRecord> select_preference_pairs(
    const std::vector<CandidateGroup>& groups);

// Candidate pools for preference-pair construction: per (prompt, emotion),
// per_band on-band renders and per_band off-band renders (random other
// emotion's hue), all scored. When path_prefix is non-empty the images are
// written there as PPM and paths point at the files; otherwise candidates
// get unique in-memory ids.
std::vector<CandidateGroup> make_candidate_groups(const std::vector<std::string>& prompts,
                                                  int n_emotions, int per_band, uint64_t seed,
                                                  const TextEncoder& text_enc,
                                                  const VisualEncoder& visual_enc,
                                                  const CrossModalScorer& scorer,
                                                  const std::string& path_prefix = "",
                                                  int image_size = 16);

// Line format: prompt, emotion id, chosen path, rejected path, then the two
// score maps as 8 floats in fixed key order (single space-separated field).
void save_preference_file(const std::string& path,
                          const std::vector<PreferencePairRecord>& records);
std::vector<PreferencePairRecord> load_preference_file(const std::string& path);

}  // namespace emodir
