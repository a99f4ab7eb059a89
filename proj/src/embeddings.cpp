#include "emodir/embeddings.hpp"

#include <cmath>
#include <fstream>

#include "emodir/rng.hpp"
#include "emodir/strutil.hpp"

namespace emodir {

StubTextEncoder::StubTextEncoder(int dim, uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 2) throw InvalidInput("StubTextEncoder: dim must be >= 2");
}

std::vector<double> StubTextEncoder::encode(const std::string& text) const {
    if (text.empty()) throw InvalidInput("encode_text: empty text");
    std::vector<double> acc(size_t(dim_), 0.0);
    for (const auto& tok : split_ws(text)) {
        const uint64_t h = hash_str(tok, seed_);
        const uint64_t h2 = mix64(h ^ 0x6a09e667f3bcc909ULL);
        acc[h % uint64_t(dim_)] += (h2 & 1) ? 1.0 : -1.0;
    }
    // Whole-string fingerprint: two strictly positive entries in distinct
    // buckets. Byte-distinct strings collide only on a 64-bit hash collision
    // or an exact value-ratio coincidence.
    const uint64_t hs = hash_str(text, seed_ ^ 0xbb67ae8584caa73bULL);
    const uint64_t b1 = hs % uint64_t(dim_);
    const uint64_t b2 = (b1 + 1 + mix64(hs) % uint64_t(dim_ - 1)) % uint64_t(dim_);
    Rng r(hs);
    acc[b1] += 1e-3 * (0.5 + r.uniform());
    acc[b2] += 1e-3 * (0.5 + r.uniform());
    l2_normalize(acc);
    return acc;
}

StubVisualEncoder::StubVisualEncoder(int dim, uint64_t seed)
    : dim_(dim), seed_(seed), proj_(dim, kRawFeatures) {
    if (dim < 2) throw InvalidInput("StubVisualEncoder: dim must be >= 2");
    Rng r(hash_combine(seed, 0x76150c4fULL));
    const double scale = 1.0 / std::sqrt(double(kRawFeatures));
    for (double& x : proj_.v) x = r.normal() * scale;
}

std::vector<double> StubVisualEncoder::encode(const Image& image) const {
    if (image.pixel_count() == 0) throw InvalidInput("encode_visual: empty image");
    if (!image.finite()) throw InvalidInput("encode_visual: non-finite pixels");
    const auto bytes = image_bytes(image);

    std::vector<double> raw(size_t(kRawFeatures), 0.0);
    for (size_t i = 0; i < bytes.size(); ++i) {
        const int channel = int(i % 3);
        const int bin = bytes[i] >> 5;
        raw[size_t(channel * kHistBins + bin)] += 1.0;
    }
    const double inv = 1.0 / double(image.pixel_count());
    for (int i = 0; i < 3 * kHistBins; ++i) raw[size_t(i)] *= inv;

    uint64_t sig = hash_bytes(bytes.data(), bytes.size(), seed_);
    sig = hash_combine(sig, uint64_t(image.width) << 32 | uint64_t(image.height));
    Rng r(sig);
    for (int i = 0; i < kHashFeatures; ++i)
        raw[size_t(3 * kHistBins + i)] = 0.05 * (2.0 * r.uniform() - 1.0);

    std::vector<double> out(size_t(dim_), 0.0);
    for (int i = 0; i < dim_; ++i) out[size_t(i)] = dot(proj_.row(i), raw.data(), kRawFeatures);
    l2_normalize(out);
    return out;
}

namespace {

void require_clean_field(const std::string& s, const char* what) {
    if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos)
        throw InvalidInput(std::string("fixture ") + what + " must not contain tabs or newlines");
}

std::vector<double> parse_float_list(const std::string& field, char tag, size_t want, size_t line_no) {
    const std::string where = " at line " + std::to_string(line_no);
    if (field.size() < 2 || field[0] != tag || field[1] != ':')
        throw ParseError(std::string("expected '") + tag + ":' field" + where);
    auto parts = split_ws(field.substr(2));
    if (parts.size() != want)
        throw ParseError("expected " + std::to_string(want) + " floats, got " +
                         std::to_string(parts.size()) + where);
    std::vector<double> out;
    out.reserve(want);
    for (const auto& p : parts) {
        try {
            out.push_back(parse_double(p));
        } catch (const ParseError&) {
            throw ParseError("bad float '" + p + "'" + where);
        }
    }
    return out;
}

}  // namespace

void save_fixture_records(const std::string& path, const FixtureFile& fixture) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "EDREC v1 " << fixture.n_emotions << " " << fixture.d_text << " " << fixture.d_visual
      << "\n";
    for (const auto& rec : fixture.records) {
        require_clean_field(rec.id, "id");
        require_clean_field(rec.text, "text");
        if (rec.emotion < 0 || rec.emotion >= fixture.n_emotions)
            throw InvalidInput("fixture record '" + rec.id + "': emotion id out of range");
        if (int(rec.text_embedding.size()) != fixture.d_text ||
            int(rec.visual_embedding.size()) != fixture.d_visual)
            throw InvalidInput("fixture record '" + rec.id + "': embedding dimension mismatch");
        f << rec.id << "\t" << rec.emotion << "\t" << rec.text << "\tt:";
        for (size_t i = 0; i < rec.text_embedding.size(); ++i)
            f << (i ? " " : "") << format_double(rec.text_embedding[i]);
        f << "\tv:";
        for (size_t i = 0; i < rec.visual_embedding.size(); ++i)
            f << (i ? " " : "") << format_double(rec.visual_embedding[i]);
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

FixtureFile load_fixture_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("empty fixture file: " + path);

    auto head = split_ws(line);
    if (head.size() != 5 || head[0] != "EDREC" || head[1] != "v1")
        throw ParseError("bad fixture header at line 1: " + path);
    FixtureFile out;
    out.n_emotions = int(parse_long(head[2]));
    out.d_text = int(parse_long(head[3]));
    out.d_visual = int(parse_long(head[4]));
    if (out.n_emotions < 1 || out.d_text < 1 || out.d_visual < 1)
        throw ParseError("bad fixture header values at line 1: " + path);

    size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = " at line " + std::to_string(line_no);
        auto fields = split(line, '\t');
        if (fields.size() != 5) throw ParseError("expected 5 tab-separated fields" + where);
        EmbeddingRecord rec;
        rec.id = fields[0];
        long emotion;
        try {
            emotion = parse_long(fields[1]);
        } catch (const ParseError&) {
            throw ParseError("bad emotion id '" + fields[1] + "'" + where);
        }
        if (emotion < 0 || emotion >= out.n_emotions)
            throw ParseError("unknown emotion id " + fields[1] + where);
        rec.emotion = int(emotion);
        rec.text = fields[2];
        rec.text_embedding = parse_float_list(fields[3], 't', size_t(out.d_text), line_no);
        rec.visual_embedding = parse_float_list(fields[4], 'v', size_t(out.d_visual), line_no);
        out.records.push_back(std::move(rec));
    }
    return out;
}

std::vector<EmbeddingRecord> load_fixture_records(const std::string& path) {
    return load_fixture_file(path).records;
}

}  // namespace emodir
