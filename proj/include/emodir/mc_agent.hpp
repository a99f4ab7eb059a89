#pragma once

#include <array>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "emodir/denoiser.hpp"
#include "emodir/prompt_bank.hpp"
#include "emodir/rng.hpp"

namespace emodir {

// Pluggable text-generation backend. Implementations must be deterministic
// for fixed (inputs, seed). generate_as routes by actor name so scripted
// backends can keep one response queue per actor; the default drops the
// actor and defers to generate.
class TextBackend {
public:
    virtual ~TextBackend() = default;
    virtual std::string generate(const std::string& system, const std::string& user,
                                 uint64_t seed) = 0;
    virtual std::string generate_as(const std::string& actor, const std::string& system,
                                    const std::string& user, uint64_t seed) {
        (void)actor;
        return generate(system, user, seed);
    }
};

// Offline deterministic stand-in for a hosted model. Extraction returns the
// prompt's content words; attribution fills a persona template; rewriting
// appends a per-emotion phrase of concrete visual detail to the source.
class RuleBackend : public TextBackend {
public:
    explicit RuleBackend(EmotionModel model = EmotionModel::mikels8());
    std::string generate(const std::string& system, const std::string& user,
                         uint64_t seed) override;
    std::string generate_as(const std::string& actor, const std::string& system,
                            const std::string& user, uint64_t seed) override;

    static const std::vector<std::string>& emotion_phrases();

private:
    EmotionModel model_;
};

// Canned responses consumed FIFO per actor. An exhausted queue raises
// BackendError (retryable from the caller's point of view).
class ScriptedBackend : public TextBackend {
public:
    ScriptedBackend() = default;
    void push(const std::string& actor, std::string response);
    // file format: one response per line, "actor<TAB>payload"
    static ScriptedBackend from_file(const std::string& path);

    std::string generate(const std::string& system, const std::string& user,
                         uint64_t seed) override;
    std::string generate_as(const std::string& actor, const std::string& system,
                            const std::string& user, uint64_t seed) override;

private:
    std::map<std::string, std::deque<std::string>> queues_;
};

struct Persona {
    int age = 0;
    std::string gender;
    std::string profession;

    std::string describe() const;
    bool operator==(const Persona&) const = default;
};

struct PersonaPools {
    std::vector<int> ages = {18, 31, 44, 57, 70};
    std::vector<std::string> genders = {"female", "male", "nonbinary"};
    std::vector<std::string> professions = {"teacher", "photographer", "nurse", "engineer",
                                            "chef"};
};

// Three personas with every attribute sampled without replacement, so they
// are pairwise distinct.
std::array<Persona, 3> sample_personas(const PersonaPools& pools, Rng& rng);

struct ConceptSet {
    std::vector<std::string> concepts;  // lower-cased, first-appearance order
    std::vector<int> proposer_counts;   // parallel: how many agents proposed it
    bool empty() const { return concepts.empty(); }
    std::string joined() const;
};

// Three extraction agents vote; concepts proposed by at least two are kept,
// falling back to the union when the majority set is empty. Throws
// ExtractionError when even the union is empty.
ConceptSet extract_concepts(const std::string& source, TextBackend& backend, uint64_t seed);

struct Attribution {
    Persona persona;
    std::string text;
};

std::vector<Attribution> attribute_emotion(const ConceptSet& concepts, int emotion,
                                           const EmotionModel& model,
                                           const std::array<Persona, 3>& personas,
                                           const std::string& source, TextBackend& backend,
                                           uint64_t seed);

struct RewriteOutput {
    std::string candidate;
    std::string instruction;  // full constructed instruction, for audit
};

RewriteOutput rewrite_prompt(const std::string& source, int emotion, const EmotionModel& model,
                             const ConceptSet& concepts,
                             const std::vector<Attribution>& attributions, TextBackend& backend,
                             uint64_t seed);

struct CheckThresholds {
    double semantic_min = 0.5;
    double emotion_min = 0.5;
    double abstractness_max = 0.5;
    double visual_min = 0.2;
    int max_tokens = 70;  // length passes strictly below this count
};

// Scorer bundle behind the checking procedure; each piece is replaceable so
// protocol tests can script outcomes. Coherence defaults to pass.
struct CheckScorers {
    std::function<double(const std::string& source, const std::string& candidate)> semantic;
    std::function<bool(const std::string& candidate)> coherence;
    std::function<double(const std::string& candidate, int emotion)> emotion;
    std::function<double(const std::string& candidate)> abstractness;
    std::function<double(const std::string& candidate)> visual;
};

struct CheckReport {
    double semantic_score = 0.0;
    bool semantic_pass = false;
    bool coherence_pass = false;
    double emotion_score = 0.0;
    bool emotion_pass = false;
    double abstractness = 0.0;
    bool abstractness_pass = false;
    double visual_score = 0.0;
    bool visual_pass = false;
    int token_count = 0;
    bool length_ok = false;
    bool overall = false;

    std::string summary() const;
};

CheckReport check(const std::string& candidate, const std::string& source, int emotion,
                  const CheckScorers& scorers, const CheckThresholds& thresholds);

// Per-emotion keyword lists, one word per line, file named after the emotion.
struct EmotionLexicon {
    std::vector<std::set<std::string>> words;
    static EmotionLexicon load(const std::string& dir, const EmotionModel& model);
};

std::set<std::string> load_word_list(const std::string& path);

struct DefaultScorerConfig {
    int probes = 4;       // probe images per candidate
    int probe_steps = 16; // sampler steps per probe
    uint64_t seed = 77;
};

class CrossModalScorer;  // dataset.hpp

// The offline scorer bundle: hashed-embedding cosine for semantic
// consistency, keyword lexicons for emotion and abstractness, and a
// probe-based visual score that samples images from the candidate and
// averages stub text-image similarity.
CheckScorers make_default_scorers(const TextEncoder& text_enc, const VisualEncoder& visual_enc,
                                  const CrossModalScorer& xmodal, const EmotionLexicon& lexicon,
                                  const std::set<std::string>& abstract_words,
                                  const DenoiserModel* probe_model,
                                  const DefaultScorerConfig& cfg = {});

struct RewriteRound {
    std::array<Persona, 3> personas;
    std::vector<Attribution> attributions;
    std::string instruction;
    std::string candidate;
    CheckReport report;
};

struct RewriteSession {
    std::string source;
    int emotion = 0;
    uint64_t seed = 0;
    ConceptSet concepts;
    std::vector<RewriteRound> rounds;  // never more than 3
    bool accepted = false;
    std::string final_prompt;    // empty on discard
    std::string discard_reason;  // empty on acceptance
    std::vector<std::string> transcript;  // "round<TAB>procedure<TAB>actor<TAB>payload"
};

// Concept extraction once, then up to three rounds of attribution, rewriting
// and checking with fresh derived seeds. The first passing candidate is
// accepted; otherwise the source is discarded with a reason.
RewriteSession orchestrate(const std::string& source, int emotion, const EmotionModel& model,
                           TextBackend& backend, const CheckScorers& scorers,
                           const CheckThresholds& thresholds, uint64_t seed,
                           const PersonaPools& pools = {});

void save_transcript(const std::string& path, const RewriteSession& session);

}  // namespace emodir
