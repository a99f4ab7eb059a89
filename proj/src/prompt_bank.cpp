#include "emodir/prompt_bank.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <numeric>

#include "emodir/serialize.hpp"

namespace emodir {

EmotionModel EmotionModel::mikels8() {
    return EmotionModel{{"amusement", "awe", "contentment", "excitement", "anger", "disgust",
                         "fear", "sadness"}};
}

int EmotionModel::index_of(const std::string& name) const {
    for (int i = 0; i < count(); ++i)
        if (names[size_t(i)] == name) return i;
    return -1;
}

namespace {

// Nearest center by squared distance, ties to the lower cluster index.
void assign_to_centers(const Matrix& pts, const Matrix& centers, std::vector<int>& out) {
    out.resize(size_t(pts.rows));
    for (int i = 0; i < pts.rows; ++i) {
        int best = 0;
        double best_d = squared_distance(pts.row(i), centers.row(0), pts.cols);
        for (int j = 1; j < centers.rows; ++j) {
            const double d = squared_distance(pts.row(i), centers.row(j), pts.cols);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out[size_t(i)] = best;
    }
}

std::vector<int> kmeanspp_init(const Matrix& pts, int k, Rng& rng) {
    const int n = pts.rows;
    std::vector<int> centers;
    centers.reserve(size_t(k));
    std::vector<double> min_d(size_t(n), std::numeric_limits<double>::infinity());
    std::vector<char> taken(size_t(n), 0);

    auto add_center = [&](int idx) {
        centers.push_back(idx);
        taken[size_t(idx)] = 1;
        for (int i = 0; i < n; ++i) {
            const double d = squared_distance(pts.row(i), pts.row(idx), pts.cols);
            if (d < min_d[size_t(i)]) min_d[size_t(i)] = d;
        }
    };

    add_center(int(rng.below(uint64_t(n))));
    while (int(centers.size()) < k) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += min_d[size_t(i)];
        if (!(total > 0.0)) {
            // All remaining points coincide with existing centers; take the
            // lowest untaken index.
            for (int i = 0; i < n; ++i)
                if (!taken[size_t(i)]) {
                    add_center(i);
                    break;
                }
            continue;
        }
        const double x = rng.uniform() * total;
        double acc = 0.0;
        int chosen = -1;
        for (int i = 0; i < n; ++i) {
            if (min_d[size_t(i)] <= 0.0) continue;
            acc += min_d[size_t(i)];
            if (acc > x) {
                chosen = i;
                break;
            }
        }
        if (chosen < 0) {  // x landed on the tail rounding; take last positive-mass point
            for (int i = n - 1; i >= 0; --i)
                if (min_d[size_t(i)] > 0.0) {
                    chosen = i;
                    break;
                }
        }
        add_center(chosen);
    }
    return centers;
}

struct KmeansRun {
    std::vector<int> center_indices;
    std::vector<int> assignments;
    double inertia = 0.0;
};

// One seeded run: k-means++ init, Lloyd to fixpoint, snap, final pass.
KmeansRun kmeans_run(const Matrix& pts, int k, Rng rng) {
    const int n = pts.rows;
    const int d = pts.cols;

    const std::vector<int> init = kmeanspp_init(pts, k, rng);
    Matrix centers(k, d);
    for (int j = 0; j < k; ++j) std::memcpy(centers.row(j), pts.row(init[size_t(j)]), sizeof(double) * size_t(d));

    std::vector<int> assign;
    assign_to_centers(pts, centers, assign);

    std::vector<int> counts(size_t(k), 0);
    auto recount = [&] {
        std::fill(counts.begin(), counts.end(), 0);
        for (int a : assign) ++counts[size_t(a)];
    };

    // Moves the point currently farthest from its own center into each empty
    // cluster (lowest point index on ties). Clusters of coincident points
    // stay empty: a zero-distance move gains nothing.
    auto fix_empty = [&] {
        recount();
        for (int j = 0; j < k; ++j) {
            if (counts[size_t(j)] > 0) continue;
            int far_idx = -1;
            double far_d = 0.0;
            for (int i = 0; i < n; ++i) {
                if (counts[size_t(assign[size_t(i)])] <= 1) continue;  // don't empty another cluster
                const double dist = squared_distance(pts.row(i), centers.row(assign[size_t(i)]), d);
                if (dist > far_d) {
                    far_d = dist;
                    far_idx = i;
                }
            }
            if (far_idx >= 0) {
                --counts[size_t(assign[size_t(far_idx)])];
                assign[size_t(far_idx)] = j;
                ++counts[size_t(j)];
            }
        }
    };

    auto recompute_means = [&] {
        recount();
        Matrix sums(k, d);
        for (int i = 0; i < n; ++i) {
            double* srow = sums.row(assign[size_t(i)]);
            const double* prow = pts.row(i);
            for (int c = 0; c < d; ++c) srow[c] += prow[c];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[size_t(j)] == 0) continue;  // empty keeps its previous position
            const double inv = 1.0 / double(counts[size_t(j)]);
            double* crow = centers.row(j);
            const double* srow = sums.row(j);
            for (int c = 0; c < d; ++c) crow[c] = srow[c] * inv;
        }
    };

    for (int iter = 0; iter < 100; ++iter) {
        fix_empty();
        recompute_means();
        std::vector<int> next;
        assign_to_centers(pts, centers, next);
        if (next == assign) break;
        assign = std::move(next);
    }

    // Snap each center to the in-cluster point nearest its mean.
    recount();
    KmeansRun out;
    out.center_indices.resize(size_t(k));
    for (int j = 0; j < k; ++j) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        const bool empty = counts[size_t(j)] == 0;
        for (int i = 0; i < n; ++i) {
            if (!empty && assign[size_t(i)] != j) continue;
            const double dist = squared_distance(pts.row(i), centers.row(j), d);
            if (dist < best_d) {
                best_d = dist;
                best = i;
            }
        }
        out.center_indices[size_t(j)] = best;
    }

    Matrix snapped(k, d);
    for (int j = 0; j < k; ++j)
        std::memcpy(snapped.row(j), pts.row(out.center_indices[size_t(j)]), sizeof(double) * size_t(d));
    assign_to_centers(pts, snapped, out.assignments);

    out.inertia = 0.0;
    for (int i = 0; i < n; ++i)
        out.inertia += squared_distance(pts.row(i), snapped.row(out.assignments[size_t(i)]), d);
    return out;
}

}  // namespace

double kmeans_inertia(const Matrix& points, const std::vector<int>& center_indices,
                      const std::vector<int>& assignments) {
    double s = 0.0;
    for (int i = 0; i < points.rows; ++i)
        s += squared_distance(points.row(i),
                              points.row(center_indices[size_t(assignments[size_t(i)])]),
                              points.cols);
    return s;
}

KmeansResult kmeans_snapped(const Matrix& points, int k, uint64_t seed, int restarts) {
    if (k < 1) throw InvalidInput("kmeans_snapped: k must be >= 1");
    if (k > points.rows)
        throw InvalidInput("kmeans_snapped: k=" + std::to_string(k) + " exceeds point count " +
                           std::to_string(points.rows));
    if (!points.finite()) throw InvalidInput("kmeans_snapped: non-finite points");
    if (restarts < 1) restarts = 1;

    Rng base(seed);
    KmeansRun best;
    bool have = false;
    for (int r = 0; r < restarts; ++r) {
        KmeansRun run = kmeans_run(points, k, base.fork(uint64_t(r)));
        if (!have || run.inertia < best.inertia) {
            best = std::move(run);
            have = true;
        }
    }
    return KmeansResult{best.center_indices, best.assignments, best.inertia};
}

PromptBank build_bank(const std::vector<EmbeddingRecord>& records, const EmotionModel& model,
                      int clusters_per_emotion, uint64_t seed) {
    if (records.empty()) throw InvalidInput("build_bank: no records");
    if (clusters_per_emotion < 1) throw InvalidInput("build_bank: L must be >= 1");

    const int d_text = int(records[0].text_embedding.size());
    const int d_visual = int(records[0].visual_embedding.size());
    std::vector<std::vector<int>> by_emotion(size_t(model.count()));
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& rec = records[i];
        if (rec.emotion < 0 || rec.emotion >= model.count())
            throw InvalidInput("build_bank: record '" + rec.id + "' has invalid emotion id");
        if (int(rec.text_embedding.size()) != d_text ||
            int(rec.visual_embedding.size()) != d_visual)
            throw InvalidInput("build_bank: record '" + rec.id + "' dimension mismatch");
        by_emotion[size_t(rec.emotion)].push_back(int(i));
    }

    PromptBank bank;
    bank.model = model;
    bank.clusters_per_emotion = clusters_per_emotion;
    bank.d_text = d_text;
    bank.d_visual = d_visual;
    bank.text_centers.resize(size_t(model.count()));
    bank.visual_centers.resize(size_t(model.count()));

    for (int e = 0; e < model.count(); ++e) {
        const auto& idx = by_emotion[size_t(e)];
        const int n = int(idx.size());
        if (n < clusters_per_emotion)
            throw BuildError("build_bank: emotion '" + model.names[size_t(e)] + "' has " +
                             std::to_string(n) + " records, needs at least " +
                             std::to_string(clusters_per_emotion));

        Matrix pts(n, d_text);
        for (int i = 0; i < n; ++i)
            std::memcpy(pts.row(i), records[size_t(idx[size_t(i)])].text_embedding.data(),
                        sizeof(double) * size_t(d_text));

        const KmeansResult km =
            kmeans_snapped(pts, clusters_per_emotion, hash_combine(seed, uint64_t(e)));

        Matrix f_text(clusters_per_emotion, d_text);
        for (int j = 0; j < clusters_per_emotion; ++j)
            std::memcpy(f_text.row(j), pts.row(km.center_indices[size_t(j)]),
                        sizeof(double) * size_t(d_text));
        for (int a = 0; a < clusters_per_emotion; ++a)
            for (int b = a + 1; b < clusters_per_emotion; ++b)
                if (std::memcmp(f_text.row(a), f_text.row(b), sizeof(double) * size_t(d_text)) == 0)
                    throw BuildError("build_bank: emotion '" + model.names[size_t(e)] +
                                     "' yields duplicate text centers; reduce L or deduplicate "
                                     "records");

        // Visual rows share the text clustering labels.
        Matrix f_visual(clusters_per_emotion, d_visual);
        std::vector<int> counts(size_t(clusters_per_emotion), 0);
        for (int i = 0; i < n; ++i) {
            const int j = km.assignments[size_t(i)];
            ++counts[size_t(j)];
            const auto& vis = records[size_t(idx[size_t(i)])].visual_embedding;
            double* row = f_visual.row(j);
            for (int c = 0; c < d_visual; ++c) row[c] += vis[size_t(c)];
        }
        for (int j = 0; j < clusters_per_emotion; ++j) {
            if (counts[size_t(j)] == 0)
                throw BuildError("build_bank: emotion '" + model.names[size_t(e)] +
                                 "' produced an empty cluster");
            std::vector<double> mean(f_visual.row(j), f_visual.row(j) + d_visual);
            for (double& x : mean) x /= double(counts[size_t(j)]);
            try {
                l2_normalize(mean);
            } catch (const NumericError&) {
                throw BuildError("build_bank: emotion '" + model.names[size_t(e)] +
                                 "' visual cluster mean has zero norm");
            }
            std::memcpy(f_visual.row(j), mean.data(), sizeof(double) * size_t(d_visual));
        }

        bank.text_centers[size_t(e)] = std::move(f_text);
        bank.visual_centers[size_t(e)] = std::move(f_visual);
    }
    return bank;
}

VisualPrompt VisualPrompt::zeros(int n_tokens, int d_visual, int emotion) {
    VisualPrompt p;
    p.tokens = Matrix(n_tokens, d_visual);
    p.emotion = emotion;
    return p;
}

VisualPrompt retrieve(const PromptBank& bank, const std::vector<double>& query_text, int emotion,
                      int n_tokens) {
    if (emotion < 0 || emotion >= bank.model.count())
        throw InvalidInput("retrieve: invalid emotion id");
    if (n_tokens < 1 || n_tokens > bank.clusters_per_emotion)
        throw InvalidInput("retrieve: token count must be in [1, L]");
    if (int(query_text.size()) != bank.d_text)
        throw InvalidInput("retrieve: query dimension mismatch");

    const Matrix& keys = bank.text_centers[size_t(emotion)];
    std::vector<double> scores(size_t(keys.rows));
    for (int j = 0; j < keys.rows; ++j)
        scores[size_t(j)] = dot(query_text.data(), keys.row(j), bank.d_text);

    std::vector<int> order(size_t(keys.rows));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return scores[size_t(a)] > scores[size_t(b)]; });

    VisualPrompt out;
    out.emotion = emotion;
    out.tokens = Matrix(n_tokens, bank.d_visual);
    out.source_indices.assign(order.begin(), order.begin() + n_tokens);
    const Matrix& values = bank.visual_centers[size_t(emotion)];
    for (int i = 0; i < n_tokens; ++i)
        std::memcpy(out.tokens.row(i), values.row(out.source_indices[size_t(i)]),
                    sizeof(double) * size_t(bank.d_visual));
    return out;
}

std::pair<int, VisualPrompt> retrieve_negative(const PromptBank& bank,
                                               const std::vector<double>& query_text, int emotion,
                                               int n_tokens, Rng& rng) {
    const int n_emotions = bank.model.count();
    if (n_emotions < 2) throw InvalidInput("retrieve_negative: need at least 2 emotions");
    if (emotion < 0 || emotion >= n_emotions)
        throw InvalidInput("retrieve_negative: invalid emotion id");
    const int draw = int(rng.below(uint64_t(n_emotions - 1)));
    const int negative = draw < emotion ? draw : draw + 1;
    return {negative, retrieve(bank, query_text, negative, n_tokens)};
}

void save_bank(const std::string& path, const PromptBank& bank) {
    BinWriter w(path);
    w.bytes("EDBK", 4);
    w.u32(1);
    w.u32(uint32_t(bank.model.count()));
    w.u32(uint32_t(bank.clusters_per_emotion));
    w.u32(uint32_t(bank.d_text));
    w.u32(uint32_t(bank.d_visual));
    for (const auto& name : bank.model.names) w.str(name);
    for (int e = 0; e < bank.model.count(); ++e) {
        for (double x : bank.text_centers[size_t(e)].v) w.f32(float(x));
        for (double x : bank.visual_centers[size_t(e)].v) w.f32(float(x));
    }
    w.close();
}

PromptBank load_bank(const std::string& path) {
    BinReader r(path);
    char magic[4];
    for (char& c : magic) c = char(r.u8());
    if (std::memcmp(magic, "EDBK", 4) != 0) throw ParseError("not a bank file: " + path);
    if (r.u32() != 1) throw ParseError("unsupported bank version: " + path);

    PromptBank bank;
    const uint32_t n_emotions = r.u32();
    bank.clusters_per_emotion = int(r.u32());
    bank.d_text = int(r.u32());
    bank.d_visual = int(r.u32());
    if (n_emotions == 0 || n_emotions > 1024 || bank.clusters_per_emotion < 1)
        throw ParseError("bad bank header: " + path);
    for (uint32_t e = 0; e < n_emotions; ++e) bank.model.names.push_back(r.str(4096));
    for (uint32_t e = 0; e < n_emotions; ++e) {
        Matrix f_text(bank.clusters_per_emotion, bank.d_text);
        for (double& x : f_text.v) x = double(r.f32());
        Matrix f_visual(bank.clusters_per_emotion, bank.d_visual);
        for (double& x : f_visual.v) x = double(r.f32());
        bank.text_centers.push_back(std::move(f_text));
        bank.visual_centers.push_back(std::move(f_visual));
    }
    if (!r.at_eof()) throw ParseError("trailing bytes in bank file: " + path);
    return bank;
}

}  // namespace emodir
