#include "emodir/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "emodir/strutil.hpp"

namespace emodir {

namespace {

constexpr int kBands = 8;
constexpr double kSatThreshold = 0.15;

const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> v = {"misty",   "sunny", "ancient", "quiet",
                                               "crowded", "frozen", "verdant", "dusty",
                                               "neon",    "rainy", "moonlit", "golden"};
    return v;
}

const std::vector<std::string>& objects() {
    static const std::vector<std::string> v = {"harbor",  "lighthouse", "forest",    "canyon",
                                               "market",  "bridge",     "castle",    "meadow",
                                               "glacier", "desert",     "village",   "skyline",
                                               "orchard", "waterfall",  "temple",    "shoreline"};
    return v;
}

double circular_distance(double a, double b) {
    double d = std::fabs(a - b);
    return std::min(d, 360.0 - d);
}

// clamp [-1,1] pixel into [0,1] display range
double unit_range(double x) { return (std::clamp(x, -1.0, 1.0) + 1.0) * 0.5; }

}  // namespace

int hue_band_of(double hue_degrees) {
    double h = std::fmod(hue_degrees, 360.0);
    if (h < 0.0) h += 360.0;
    int band = int(h / kHueBandWidth);
    return std::min(band, kBands - 1);
}

double hue_band_center(int emotion) { return kHueBandWidth * double(emotion) + kHueBandWidth / 2.0; }

int emotion_classify_toy(const Image& img) {
    if (img.pixel_count() == 0) throw InvalidInput("emotion_classify_toy: empty image");
    std::array<double, kBands> mass{};
    double total = 0.0;
    double hue_sum = 0.0;
    for (size_t p = 0; p < img.pixel_count(); ++p) {
        const Hsv hsv = rgb_to_hsv(unit_range(img.rgb[p * 3]), unit_range(img.rgb[p * 3 + 1]),
                                   unit_range(img.rgb[p * 3 + 2]));
        hue_sum += hsv.h;
        if (hsv.s < kSatThreshold) continue;
        mass[size_t(hue_band_of(hsv.h))] += hsv.s;
        total += hsv.s;
    }
    if (total > 0.0) {
        int best = 0;
        for (int e = 1; e < kBands; ++e)
            if (mass[size_t(e)] > mass[size_t(best)]) best = e;
        return best;
    }
    // No dominant hue: nearest band center to the mean hue.
    const double mean_hue = hue_sum / double(img.pixel_count());
    int best = 0;
    double best_d = circular_distance(mean_hue, hue_band_center(0));
    for (int e = 1; e < kBands; ++e) {
        const double d = circular_distance(mean_hue, hue_band_center(e));
        if (d < best_d) {
            best_d = d;
            best = e;
        }
    }
    return best;
}

double emotion_band_score(const Image& img, int emotion) {
    if (emotion < 0 || emotion >= kBands) throw InvalidInput("emotion_band_score: bad emotion id");
    std::array<double, kBands> mass{};
    double total = 0.0;
    for (size_t p = 0; p < img.pixel_count(); ++p) {
        const Hsv hsv = rgb_to_hsv(unit_range(img.rgb[p * 3]), unit_range(img.rgb[p * 3 + 1]),
                                   unit_range(img.rgb[p * 3 + 2]));
        if (hsv.s < kSatThreshold) continue;
        mass[size_t(hue_band_of(hsv.h))] += hsv.s;
        total += hsv.s;
    }
    return total > 0.0 ? mass[size_t(emotion)] / total : 0.0;
}

Image render_toy_image(int emotion, Rng& rng, int image_size) {
    if (emotion < 0 || emotion >= kBands) throw InvalidInput("render_toy_image: bad emotion id");
    const double size = double(image_size);

    const double v_top = rng.uniform(0.15, 0.4);
    const double v_bottom = rng.uniform(0.15, 0.4);
    const double cx = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
    const double cy = size / 2.0 + rng.uniform(-size / 8.0, size / 8.0);
    const double radius = rng.uniform(0.28, 0.40) * size;
    // 7.5 degrees of margin to the band edges survives 8-bit quantization
    const double hue = hue_band_center(emotion) + rng.uniform(-15.0, 15.0);
    const double sat = rng.uniform(0.85, 1.0);
    const double val = 0.75 * rng.uniform(0.8, 1.2);  // +-20% brightness jitter

    Image img(image_size, image_size);
    for (int y = 0; y < image_size; ++y) {
        const double bg = v_top + (v_bottom - v_top) * double(y) / double(image_size - 1);
        for (int x = 0; x < image_size; ++x) {
            double r, g, b;
            const double dx = double(x) + 0.5 - cx;
            const double dy = double(y) + 0.5 - cy;
            if (dx * dx + dy * dy <= radius * radius) {
                hsv_to_rgb({std::fmod(hue + 360.0, 360.0), sat, std::clamp(val, 0.0, 1.0)}, r, g, b);
            } else {
                r = g = b = bg;
            }
            img.at(x, y, 0) = r * 2.0 - 1.0;
            img.at(x, y, 1) = g * 2.0 - 1.0;
            img.at(x, y, 2) = b * 2.0 - 1.0;
        }
    }
    return img;
}

int toy_prompt_pool_size() { return int(adjectives().size() * objects().size()); }

std::string toy_prompt(int combo) {
    if (combo < 0 || combo >= toy_prompt_pool_size())
        throw InvalidInput("toy_prompt: combo index out of range");
    return "a " + adjectives()[size_t(combo / int(objects().size()))] + " " +
           objects()[size_t(combo % int(objects().size()))] + " scene";
}

ToyDataset build_toy_dataset(int n_per_emotion, uint64_t seed, const TextEncoder& text_enc,
                             const VisualEncoder& visual_enc, int image_size) {
    if (n_per_emotion < 1) throw InvalidInput("build_toy_dataset: n_per_emotion must be >= 1");
    if (n_per_emotion > toy_prompt_pool_size())
        throw InvalidInput("build_toy_dataset: n_per_emotion exceeds prompt pool (" +
                           std::to_string(toy_prompt_pool_size()) + ")");
    const EmotionModel model = EmotionModel::mikels8();
    Rng base(seed);

    ToyDataset out;
    out.records.reserve(size_t(8 * n_per_emotion));
    out.images.reserve(size_t(8 * n_per_emotion));
    for (int e = 0; e < model.count(); ++e) {
        Rng rng = base.fork(uint64_t(e));
        // distinct prompts per emotion: shuffled pool prefix
        std::vector<int> pool(static_cast<size_t>(toy_prompt_pool_size()));
        for (size_t i = 0; i < pool.size(); ++i) pool[i] = int(i);
        for (size_t i = pool.size(); i > 1; --i)
            std::swap(pool[i - 1], pool[size_t(rng.below(uint64_t(i)))]);

        for (int i = 0; i < n_per_emotion; ++i) {
            const std::string prompt = toy_prompt(pool[size_t(i)]);
            Image img = render_toy_image(e, rng, image_size);

            EmbeddingRecord rec;
            char idbuf[16];
            std::snprintf(idbuf, sizeof(idbuf), "%03d", i);
            rec.id = model.names[size_t(e)] + "_" + idbuf;
            rec.emotion = e;
            rec.text = prompt;
            rec.text_embedding = text_enc.encode(prompt);
            rec.visual_embedding = visual_enc.encode(img);
            out.records.push_back(std::move(rec));
            out.images.push_back(std::move(img));
        }
    }
    return out;
}

bool Scores::all_finite() const {
    for (double v : values())
        if (!std::isfinite(v)) return false;
    return true;
}

CrossModalScorer::CrossModalScorer(int d_text, int d_visual, uint64_t seed)
    : proj_(d_visual, d_text) {
    Rng r(hash_combine(seed, 0xc405a11aULL));
    const double scale = 1.0 / std::sqrt(double(d_text));
    for (double& x : proj_.v) x = r.normal() * scale;
}

double CrossModalScorer::similarity(const std::vector<double>& text_emb,
                                    const std::vector<double>& visual_emb) const {
    if (int(text_emb.size()) != proj_.cols || int(visual_emb.size()) != proj_.rows)
        throw InvalidInput("CrossModalScorer: dimension mismatch");
    std::vector<double> projected(size_t(proj_.rows));
    for (int i = 0; i < proj_.rows; ++i)
        projected[size_t(i)] = dot(proj_.row(i), text_emb.data(), proj_.cols);
    return 0.5 * (1.0 + cosine(projected, visual_emb));
}

Scores score_candidate(const Image& img, const std::string& prompt, int emotion,
                       const TextEncoder& text_enc, const VisualEncoder& visual_enc,
                       const CrossModalScorer& scorer) {
    Scores s;
    // contrast proxy: stddev of luminance
    double mean = 0.0;
    std::vector<double> luma(img.pixel_count());
    for (size_t p = 0; p < img.pixel_count(); ++p) {
        luma[p] = 0.2126 * unit_range(img.rgb[p * 3]) + 0.7152 * unit_range(img.rgb[p * 3 + 1]) +
                  0.0722 * unit_range(img.rgb[p * 3 + 2]);
        mean += luma[p];
    }
    mean /= double(img.pixel_count());
    double var = 0.0;
    for (double l : luma) var += (l - mean) * (l - mean);
    var /= double(img.pixel_count());
    s.aesthetic = std::min(1.0, 3.0 * std::sqrt(var));

    s.consistency = scorer.similarity(text_enc.encode(prompt), visual_enc.encode(img));

    const auto bytes = image_bytes(img);
    const uint64_t h = hash_bytes(bytes.data(), bytes.size(), 0x9e11ULL);
    s.human_pref = 0.45 + 0.1 * (double(h >> 11) * 0x1.0p-53);

    s.emotion = emotion_band_score(img, emotion);
    return s;
}

std::vector<PreferencePairRecord> select_preference_pairs(
    const std::vector<CandidateGroup>& groups) {
    std::vector<PreferencePairRecord> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& group : groups) {
        if (group.candidates.empty())
            throw InvalidInput("select_preference_pairs: empty candidate group for prompt '" +
                               group.prompt + "'");
        const int n = int(group.candidates.size());
        for (int i = 0; i < n; ++i) {
            const ScoredCandidate& a = group.candidates[size_t(i)];
            if (!a.scores.all_finite())
                throw InvalidInput("select_preference_pairs: non-finite score for candidate " +
                                   std::to_string(i));
            for (int j = 0; j < n; ++j) {
                if (i == j) continue;
                const ScoredCandidate& b = group.candidates[size_t(j)];
                const auto av = a.scores.values();
                const auto bv = b.scores.values();
                bool wins_all = true;
                for (size_t k = 0; k < av.size(); ++k)
                    if (!(av[k] >= bv[k])) wins_all = false;
                if (!wins_all) continue;
                if (!(a.scores.emotion - b.scores.emotion >= 0.2)) continue;
                if (!a.image_path.empty() && !b.image_path.empty()) {
                    auto key = std::make_pair(a.image_path, b.image_path);
                    if (!seen.insert(key).second) continue;
                }
                out.push_back({group.prompt, group.emotion, a.image_path, b.image_path, a.scores,
                               b.scores});
            }
        }
    }
    return out;
}

std::vector<CandidateGroup> make_candidate_groups(const std::vector<std::string>& prompts,
                                                  int n_emotions, int per_band, uint64_t seed,
                                                  const TextEncoder& text_enc,
                                                  const VisualEncoder& visual_enc,
                                                  const CrossModalScorer& scorer,
                                                  const std::string& path_prefix, int image_size) {
    if (per_band < 1) throw InvalidInput("make_candidate_groups: per_band must be >= 1");
    if (n_emotions < 2 || n_emotions > kBands)
        throw InvalidInput("make_candidate_groups: n_emotions out of range");
    std::vector<CandidateGroup> out;
    Rng base(seed);
    int group_idx = 0;
    for (const auto& prompt : prompts) {
        for (int e = 0; e < n_emotions; ++e) {
            CandidateGroup group;
            group.prompt = prompt;
            group.emotion = e;
            Rng rng = base.fork(uint64_t(group_idx));
            for (int c = 0; c < 2 * per_band; ++c) {
                int band = e;
                if (c >= per_band) {  // off-band candidate: any other emotion's hue
                    const int draw = int(rng.below(uint64_t(n_emotions - 1)));
                    band = draw < e ? draw : draw + 1;
                }
                ScoredCandidate cand;
                cand.prompt = prompt;
                cand.emotion = e;
                cand.image = render_toy_image(band, rng, image_size);
                if (path_prefix.empty()) {
                    cand.image_path = "mem://g" + std::to_string(group_idx) + "/c" +
                                      std::to_string(c);
                } else {
                    cand.image_path = path_prefix + "/cand_g" + std::to_string(group_idx) + "_c" +
                                      std::to_string(c) + ".ppm";
                    write_ppm(cand.image_path, cand.image);
                }
                cand.scores = score_candidate(cand.image, prompt, e, text_enc, visual_enc, scorer);
                group.candidates.push_back(std::move(cand));
            }
            out.push_back(std::move(group));
            ++group_idx;
        }
    }
    return out;
}

namespace {

void require_no_tabs(const std::string& s, const char* what) {
    if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
        throw InvalidInput(std::string("preference file ") + what +
                           " must not contain tabs or newlines");
}

}  // namespace

void save_preference_file(const std::string& path,
                          const std::vector<PreferencePairRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& rec : records) {
        require_no_tabs(rec.prompt, "prompt");
        require_no_tabs(rec.chosen_path, "chosen path");
        require_no_tabs(rec.rejected_path, "rejected path");
        f << rec.prompt << "\t" << rec.emotion << "\t" << rec.chosen_path << "\t"
          << rec.rejected_path << "\t";
        const auto cv = rec.chosen_scores.values();
        const auto rv = rec.rejected_scores.values();
        for (size_t i = 0; i < cv.size(); ++i) f << (i ? " " : "") << format_double(cv[i]);
        for (double v : rv) f << " " << format_double(v);
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

std::vector<PreferencePairRecord> load_preference_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<PreferencePairRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = " at line " + std::to_string(line_no);
        auto fields = split(line, '\t');
        if (fields.size() != 5) throw ParseError("expected 5 tab-separated fields" + where);
        PreferencePairRecord rec;
        rec.prompt = fields[0];
        const long e = parse_long(fields[1]);
        if (e < 0 || e >= kBands) throw ParseError("emotion id out of range" + where);
        rec.emotion = int(e);
        rec.chosen_path = fields[2];
        rec.rejected_path = fields[3];
        auto floats = split_ws(fields[4]);
        if (floats.size() != 8) throw ParseError("expected 8 score floats" + where);
        std::array<double, 8> v{};
        for (size_t i = 0; i < 8; ++i) v[i] = parse_double(floats[i]);
        rec.chosen_scores = {v[0], v[1], v[2], v[3]};
        rec.rejected_scores = {v[4], v[5], v[6], v[7]};
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace emodir
