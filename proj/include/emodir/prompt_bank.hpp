#pragma once

#include <string>
#include <utility>
#include <vector>

#include "emodir/embeddings.hpp"
#include "emodir/mat.hpp"
#include "emodir/rng.hpp"

namespace emodir {

// Mikels' eight-emotion taxonomy in fixed index order.
struct EmotionModel {
    std::vector<std::string> names;

    static EmotionModel mikels8();
    int count() const { return int(names.size()); }
    int index_of(const std::string& name) const;  // -1 when unknown
};

struct KmeansResult {
    std::vector<int> center_indices;  // K indices into the input points
    std::vector<int> assignments;     // N cluster ids
    double inertia = 0.0;             // against the snapped centers
};

// Lloyd iterations from k-means++ seeding, run to an assignment fixpoint
// (at most 100 sweeps). Each converged center is then snapped to the
// in-cluster point nearest the mean and one final assignment pass is run
// against the snapped centers, so every center is a dataset member.
// Ties always resolve to the lower index. `restarts` independent seeded
// runs are scored by snapped inertia and the best one is returned.
KmeansResult kmeans_snapped(const Matrix& points, int k, uint64_t seed, int restarts = 6);

double kmeans_inertia(const Matrix& points, const std::vector<int>& center_indices,
                      const std::vector<int>& assignments);

// Per-emotion paired matrices: text rows are snapped cluster centers (exact
// copies of input embeddings, the retrieval keys); visual rows are the
// unit-normalized means of the visual embeddings sharing each text cluster.
struct PromptBank {
    EmotionModel model;
    int clusters_per_emotion = 0;  // L
    int d_text = 0;
    int d_visual = 0;
    std::vector<Matrix> text_centers;    // per emotion, L×d_text
    std::vector<Matrix> visual_centers;  // per emotion, L×d_visual
};

PromptBank build_bank(const std::vector<EmbeddingRecord>& records, const EmotionModel& model,
                      int clusters_per_emotion, uint64_t seed);

// The retrieved guidance tokens. Rows are copies of visual-center rows at
// source_indices; an empty source_indices marks a synthetic prompt (the
// all-zeros prompt used when visual conditioning is disabled).
struct VisualPrompt {
    Matrix tokens;                   // n×d_visual
    std::vector<int> source_indices;
    int emotion = -1;

    static VisualPrompt zeros(int n_tokens, int d_visual, int emotion = -1);
};

// Dot-product scores of the query against the emotion's text centers;
// returns the top-n rows of the visual centers in descending-score order,
// ties broken toward the lower row index.
VisualPrompt retrieve(const PromptBank& bank, const std::vector<double>& query_text, int emotion,
                      int n_tokens);

// Same-query retrieval from the bank of a uniformly drawn *other* emotion.
std::pair<int, VisualPrompt> retrieve_negative(const PromptBank& bank,
                                               const std::vector<double>& query_text, int emotion,
                                               int n_tokens, Rng& rng);

// Binary bank file, little-endian: magic "EDBK", version, |E|, L, dt, dv,
// emotion names, then per emotion the text and visual centers as f32.
void save_bank(const std::string& path, const PromptBank& bank);
PromptBank load_bank(const std::string& path);

}  // namespace emodir
