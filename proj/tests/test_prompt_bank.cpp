#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <functional>
#include <limits>
#include <cstring>
#include <numeric>
#include <set>

#include "emodir/dataset.hpp"
#include "emodir/embeddings.hpp"
#include "emodir/prompt_bank.hpp"

#include "test_util.hpp"

using namespace emodir;
using emodir::testutil::TempDir;

namespace {

Matrix points_from(const std::vector<std::vector<double>>& rows) {
    Matrix m(int(rows.size()), int(rows[0].size()));
    for (size_t i = 0; i < rows.size(); ++i)
        for (size_t j = 0; j < rows[i].size(); ++j) m(int(i), int(j)) = rows[i][j];
    return m;
}

// All center subsets of size k, assignment to the nearest, minimum inertia.
double exhaustive_best_inertia(const Matrix& pts, int k) {
    std::vector<int> subset(static_cast<size_t>(k));
    std::vector<int> best_subset;
    double best = std::numeric_limits<double>::infinity();
    std::function<void(int, int)> rec = [&](int start, int depth) {
        if (depth == k) {
            double inertia = 0.0;
            for (int i = 0; i < pts.rows; ++i) {
                double d = std::numeric_limits<double>::infinity();
                for (int c : subset)
                    d = std::min(d, squared_distance(pts.row(i), pts.row(c), pts.cols));
                inertia += d;
            }
            if (inertia < best) best = inertia;
            return;
        }
        for (int i = start; i < pts.rows; ++i) {
            subset[size_t(depth)] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

}  // namespace

TEST_CASE("kmeans: one point per cluster at N == K") {
    const Matrix pts = points_from({{0, 0}, {1, 0}, {0, 1}, {5, 5}});
    const KmeansResult res = kmeans_snapped(pts, 4, 42);
    std::set<int> centers(res.center_indices.begin(), res.center_indices.end());
    CHECK(centers == std::set<int>{0, 1, 2, 3});
    CHECK(res.inertia == 0.0);
}

TEST_CASE("kmeans: all points identical") {
    const Matrix pts = points_from({{2, 2}, {2, 2}, {2, 2}, {2, 2}});
    const KmeansResult res = kmeans_snapped(pts, 2, 7);
    for (int c : res.center_indices) {
        CHECK(pts(c, 0) == 2.0);
        CHECK(pts(c, 1) == 2.0);
    }
    for (int a : res.assignments) CHECK(a == 0);  // ties resolve to the lower cluster
    CHECK(res.inertia == 0.0);
}

TEST_CASE("kmeans: two blobs match the exhaustive center-pair search") {
    const Matrix pts =
        points_from({{0, 0}, {0.1, 0}, {0, 0.1}, {5, 5}, {5.1, 5}, {5, 5.1}});
    const KmeansResult res = kmeans_snapped(pts, 2, 123);
    const double best = exhaustive_best_inertia(pts, 2);
    CHECK(res.inertia == doctest::Approx(best).epsilon(1e-12));
    // blob-mean-nearest members are the corner points {0,0} and {5,5}
    std::set<int> centers(res.center_indices.begin(), res.center_indices.end());
    CHECK(centers == std::set<int>{0, 3});
}

TEST_CASE("kmeans: invalid inputs") {
    const Matrix pts = points_from({{0, 0}, {1, 1}});
    CHECK_THROWS_AS(kmeans_snapped(pts, 3, 1), InvalidInput);
    CHECK_THROWS_AS(kmeans_snapped(pts, 0, 1), InvalidInput);
}

TEST_CASE("kmeans: deterministic across calls") {
    Rng rng(5);
    Matrix pts(40, 6);
    for (double& x : pts.v) x = rng.normal();
    const KmeansResult a = kmeans_snapped(pts, 5, 99);
    const KmeansResult b = kmeans_snapped(pts, 5, 99);
    CHECK(a.center_indices == b.center_indices);
    CHECK(a.assignments == b.assignments);
    CHECK(a.inertia == b.inertia);
}

namespace {

std::vector<EmbeddingRecord> synthetic_records(int per_emotion, int n_emotions, uint64_t seed) {
    StubTextEncoder text_enc(32, 1);
    StubVisualEncoder visual_enc(48, 2);
    Rng rng(seed);
    std::vector<EmbeddingRecord> out;
    for (int e = 0; e < n_emotions; ++e)
        for (int i = 0; i < per_emotion; ++i) {
            EmbeddingRecord rec;
            rec.id = std::to_string(e) + "_" + std::to_string(i);
            rec.emotion = e;
            rec.text = testutil::random_text(rng, 2, 5) + " " + std::to_string(e) + " " +
                       std::to_string(i);
            rec.text_embedding = text_enc.encode(rec.text);
            rec.visual_embedding = visual_enc.encode(render_toy_image(e % 8, rng));
            out.push_back(std::move(rec));
        }
    return out;
}

}  // namespace

TEST_CASE("build_bank: single cluster snaps to the mean-nearest embedding") {
    const EmotionModel solo{{"solo"}};
    auto records = synthetic_records(3, 1, 77);
    const PromptBank bank = build_bank(records, solo, 1, 3);

    // oracle: nearest record to the mean of the three text embeddings
    const int d = 32;
    std::vector<double> mean(d, 0.0);
    for (const auto& r : records)
        for (int j = 0; j < d; ++j) mean[size_t(j)] += r.text_embedding[size_t(j)] / 3.0;
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
        const double dist =
            squared_distance(records[size_t(i)].text_embedding.data(), mean.data(), d);
        if (dist < best) {
            best = dist;
            nearest = i;
        }
    }
    CHECK(std::memcmp(bank.text_centers[0].row(0),
                      records[size_t(nearest)].text_embedding.data(), sizeof(double) * d) == 0);

    // visual row: normalized mean of all three visual embeddings
    std::vector<double> vmean(48, 0.0);
    for (const auto& r : records)
        for (int j = 0; j < 48; ++j) vmean[size_t(j)] += r.visual_embedding[size_t(j)] / 3.0;
    l2_normalize(vmean);
    for (int j = 0; j < 48; ++j)
        CHECK(bank.visual_centers[0](0, j) == doctest::Approx(vmean[size_t(j)]).epsilon(1e-12));
}

TEST_CASE("build_bank: zero-inertia input keeps the exact points") {
    // records already sit at K well-separated embeddings
    const EmotionModel solo{{"solo"}};
    StubTextEncoder text_enc(32, 1);
    StubVisualEncoder visual_enc(48, 2);
    Rng rng(8);
    std::vector<EmbeddingRecord> records;
    std::vector<std::vector<double>> keys;
    for (int k = 0; k < 4; ++k) keys.push_back(text_enc.encode("anchor " + std::to_string(k)));
    for (int i = 0; i < 12; ++i) {
        EmbeddingRecord rec;
        rec.id = std::to_string(i);
        rec.emotion = 0;
        rec.text = "anchor " + std::to_string(i % 4);
        rec.text_embedding = keys[size_t(i % 4)];
        rec.visual_embedding = visual_enc.encode(render_toy_image(i % 8, rng));
        records.push_back(std::move(rec));
    }
    const PromptBank bank = build_bank(records, solo, 4, 9);
    std::set<std::vector<double>> rows;
    for (int j = 0; j < 4; ++j)
        rows.insert(std::vector<double>(bank.text_centers[0].row(j),
                                        bank.text_centers[0].row(j) + 32));
    CHECK(rows == std::set<std::vector<double>>(keys.begin(), keys.end()));
}

TEST_CASE("build_bank: deterministic and snapped") {
    auto records = synthetic_records(25, 8, 11);
    const PromptBank a = build_bank(records, EmotionModel::mikels8(), 4, 1);
    const PromptBank b = build_bank(records, EmotionModel::mikels8(), 4, 1);
    for (int e = 0; e < 8; ++e) {
        CHECK(a.text_centers[size_t(e)].v == b.text_centers[size_t(e)].v);
        CHECK(a.visual_centers[size_t(e)].v == b.visual_centers[size_t(e)].v);
        // every text row appears verbatim among that emotion's records
        for (int j = 0; j < a.clusters_per_emotion; ++j) {
            bool found = false;
            for (const auto& rec : records) {
                if (rec.emotion != e) continue;
                if (std::memcmp(rec.text_embedding.data(), a.text_centers[size_t(e)].row(j),
                                sizeof(double) * 32) == 0)
                    found = true;
            }
            CHECK(found);
        }
    }
}

TEST_CASE("build_bank: too few records names the emotion") {
    auto records = synthetic_records(3, 8, 12);
    // awe (index 1) loses a record
    records.erase(std::find_if(records.begin(), records.end(),
                               [](const EmbeddingRecord& r) { return r.emotion == 1; }));
    try {
        build_bank(records, EmotionModel::mikels8(), 3, 1);
        FAIL("expected BuildError");
    } catch (const BuildError& e) {
        CHECK(std::string(e.what()).find("awe") != std::string::npos);
    }
}

namespace {

PromptBank tiny_basis_bank() {
    PromptBank bank;
    bank.model = EmotionModel{{"zero", "one"}};
    bank.clusters_per_emotion = 4;
    bank.d_text = 4;
    bank.d_visual = 3;
    for (int e = 0; e < 2; ++e) {
        Matrix keys(4, 4);
        for (int j = 0; j < 4; ++j) keys(j, j) = 1.0;  // standard basis
        Matrix values(4, 3);
        for (int j = 0; j < 4; ++j)
            for (int c = 0; c < 3; ++c) values(j, c) = double(10 * e + j) + 0.1 * c;
        bank.text_centers.push_back(keys);
        bank.visual_centers.push_back(values);
    }
    return bank;
}

std::vector<int> brute_force_topk(const Matrix& keys, const std::vector<double>& q, int k) {
    std::vector<int> order(size_t(keys.rows));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dot(keys.row(a), q.data(), keys.cols) > dot(keys.row(b), q.data(), keys.cols);
    });
    order.resize(size_t(k));
    return order;
}

}  // namespace

TEST_CASE("retrieve: exact basis match") {
    const PromptBank bank = tiny_basis_bank();
    const std::vector<double> q = {0, 1, 0, 0};
    const VisualPrompt p = retrieve(bank, q, 0, 1);
    CHECK(p.source_indices == std::vector<int>{1});
    for (int c = 0; c < 3; ++c) CHECK(p.tokens(0, c) == bank.visual_centers[0](1, c));
}

TEST_CASE("retrieve: descending order against brute force") {
    const PromptBank bank = tiny_basis_bank();
    std::vector<double> q = {1.0, 0.5, 0.0, 0.0};
    l2_normalize(q);
    const VisualPrompt p = retrieve(bank, q, 0, 2);
    CHECK(p.source_indices == std::vector<int>{0, 1});
    CHECK(p.source_indices == brute_force_topk(bank.text_centers[0], q, 2));
}

TEST_CASE("retrieve: full retrieval is a score-ordered permutation") {
    const PromptBank bank = tiny_basis_bank();
    std::vector<double> q = {0.3, -0.2, 0.9, 0.1};
    l2_normalize(q);
    const VisualPrompt p = retrieve(bank, q, 1, 4);
    std::set<int> idx(p.source_indices.begin(), p.source_indices.end());
    CHECK(idx == std::set<int>{0, 1, 2, 3});
    CHECK(p.source_indices == brute_force_topk(bank.text_centers[1], q, 4));
}

TEST_CASE("retrieve: invalid token count") {
    const PromptBank bank = tiny_basis_bank();
    CHECK_THROWS_AS(retrieve(bank, {1, 0, 0, 0}, 0, 5), InvalidInput);
    CHECK_THROWS_AS(retrieve(bank, {1, 0, 0, 0}, 2, 1), InvalidInput);
}

TEST_CASE("retrieve: random banks agree with brute force, ties included") {
    Rng rng(31);
    for (int trial = 0; trial < 60; ++trial) {
        PromptBank bank;
        const int L = 1 + int(rng.below(64));
        const int d = 2 + int(rng.below(12));
        bank.model = EmotionModel{{"only"}};
        bank.clusters_per_emotion = L;
        bank.d_text = d;
        bank.d_visual = 2;
        Matrix keys(L, d);
        for (double& x : keys.v) x = rng.normal();
        // duplicated rows force score ties
        if (L > 2) std::memcpy(keys.row(L - 1), keys.row(0), sizeof(double) * size_t(d));
        bank.text_centers.push_back(keys);
        bank.visual_centers.emplace_back(L, 2);

        std::vector<double> q(static_cast<size_t>(d));
        for (double& x : q) x = rng.normal();
        for (int n = 1; n <= L; n = n * 2 + 1) {
            const VisualPrompt p = retrieve(bank, q, 0, n);
            CHECK(p.source_indices == brute_force_topk(keys, q, n));
        }
    }
}

TEST_CASE("retrieve: positive scaling of the query leaves indices unchanged") {
    Rng rng(37);
    PromptBank bank = tiny_basis_bank();
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> q(4);
        for (double& x : q) x = rng.normal();
        const auto base = retrieve(bank, q, 0, 3).source_indices;
        for (double scale : {0.25, 3.0, 1e6}) {
            std::vector<double> scaled = q;
            for (double& x : scaled) x *= scale;
            CHECK(retrieve(bank, scaled, 0, 3).source_indices == base);
        }
    }
}

TEST_CASE("retrieve_negative: exclusion, determinism, uniformity") {
    auto records = synthetic_records(6, 8, 13);
    const PromptBank bank = build_bank(records, EmotionModel::mikels8(), 3, 2);
    const std::vector<double> q = records[0].text_embedding;

    SUBCASE("never the positive emotion") {
        Rng rng(1);
        for (int i = 0; i < 100; ++i) {
            auto [e_n, p] = retrieve_negative(bank, q, 4, 2, rng);
            CHECK(e_n != 4);
            CHECK(p.emotion == e_n);
        }
    }
    SUBCASE("fixed seed reproduces the draw") {
        Rng a(9), b(9);
        auto ra = retrieve_negative(bank, q, 2, 2, a);
        auto rb = retrieve_negative(bank, q, 2, 2, b);
        CHECK(ra.first == rb.first);
        CHECK(ra.second.source_indices == rb.second.source_indices);
        CHECK(ra.second.tokens.v == rb.second.tokens.v);
    }
    SUBCASE("70k draws: each other emotion lands within 1/7 +- 0.01") {
        Rng rng(123);
        std::array<int, 8> counts{};
        const int n = 70000;
        for (int i = 0; i < n; ++i) {
            auto [e_n, p] = retrieve_negative(bank, q, 3, 1, rng);
            ++counts[size_t(e_n)];
        }
        CHECK(counts[3] == 0);
        for (int e = 0; e < 8; ++e) {
            if (e == 3) continue;
            const double freq = double(counts[size_t(e)]) / double(n);
            CHECK(std::fabs(freq - 1.0 / 7.0) < 0.01);
        }
    }
}

TEST_CASE("bank persistence is bitwise") {
    TempDir tmp("bank");
    auto records = synthetic_records(6, 8, 17);
    const PromptBank bank = build_bank(records, EmotionModel::mikels8(), 4, 5);
    save_bank(tmp.file("a.edbk"), bank);
    const PromptBank loaded = load_bank(tmp.file("a.edbk"));
    CHECK(loaded.model.names == bank.model.names);
    save_bank(tmp.file("b.edbk"), loaded);
    CHECK(testutil::read_file_bytes(tmp.file("a.edbk")) ==
          testutil::read_file_bytes(tmp.file("b.edbk")));

    // f32-valued contents survive the round trip exactly in memory too
    PromptBank snapped = bank;
    for (auto* mats : {&snapped.text_centers, &snapped.visual_centers})
        for (auto& m : *mats)
            for (double& x : m.v) x = double(float(x));
    save_bank(tmp.file("c.edbk"), snapped);
    const PromptBank reloaded = load_bank(tmp.file("c.edbk"));
    for (int e = 0; e < 8; ++e) {
        CHECK(reloaded.text_centers[size_t(e)].v == snapped.text_centers[size_t(e)].v);
        CHECK(reloaded.visual_centers[size_t(e)].v == snapped.visual_centers[size_t(e)].v);
    }
}
