#pragma once

#include <memory>
#include <string>
#include <vector>

#include "emodir/image.hpp"
#include "emodir/mat.hpp"

namespace emodir {

// Feature providers. Implementations must be deterministic for a fixed
// (input, seed, dim) and must emit unit-L2-norm vectors. The stubs below
// stand in for heavyweight pretrained encoders so every downstream module
// stays offline and testable.

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual int dim() const = 0;
    virtual std::vector<double> encode(const std::string& text) const = 0;
};

class VisualEncoder {
public:
    virtual ~VisualEncoder() = default;
    virtual int dim() const = 0;
    virtual std::vector<double> encode(const Image& image) const = 0;
};

// Seeded feature hashing of whitespace tokens into dim buckets (signed
// counts), plus a small whole-string component so byte-distinct strings map
// to distinct vectors, then L2 normalization. Strings sharing tokens land
// near each other, which the downstream consistency scorers rely on.
class StubTextEncoder : public TextEncoder {
public:
    explicit StubTextEncoder(int dim = 32, uint64_t seed = 0);
    int dim() const override { return dim_; }
    std::vector<double> encode(const std::string& text) const override;

private:
    int dim_;
    uint64_t seed_;
};

// Per-channel 8-bin histograms of the quantized pixels concatenated with a
// seeded hash signature of the raw bytes, pushed through a fixed seeded
// projection to dim, then normalized. Hue shifts move histogram mass across
// channels, so they visibly move the embedding.
class StubVisualEncoder : public VisualEncoder {
public:
    explicit StubVisualEncoder(int dim = 48, uint64_t seed = 0);
    int dim() const override { return dim_; }
    std::vector<double> encode(const Image& image) const override;

    static constexpr int kHistBins = 8;
    static constexpr int kHashFeatures = 8;
    static constexpr int kRawFeatures = 3 * kHistBins + kHashFeatures;

private:
    int dim_;
    uint64_t seed_;
    Matrix proj_;  // dim × kRawFeatures
};

struct EmbeddingRecord {
    std::string id;
    int emotion = 0;
    std::string text;
    std::vector<double> text_embedding;
    std::vector<double> visual_embedding;
};

struct FixtureFile {
    int n_emotions = 0;
    int d_text = 0;
    int d_visual = 0;
    std::vector<EmbeddingRecord> records;
};

// Fixture format: UTF-8 text. Header "EDREC v1 <E> <dt> <dv>", then one
// record per line: id, emotion id, text, "t:" + dt floats, "v:" + dv floats,
// tab-separated. Floats use shortest round-trip decimal form, so
// save -> load reproduces bit-identical doubles.
void save_fixture_records(const std::string& path, const FixtureFile& fixture);
FixtureFile load_fixture_file(const std::string& path);
std::vector<EmbeddingRecord> load_fixture_records(const std::string& path);

}  // namespace emodir
