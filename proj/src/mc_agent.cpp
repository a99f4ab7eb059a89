#include "emodir/mc_agent.hpp"

#include <algorithm>
#include <fstream>

#include "emodir/dataset.hpp"
#include "emodir/strutil.hpp"

namespace emodir {

namespace {

const std::set<std::string>& stopwords() {
    static const std::set<std::string> v = {"a",  "an",  "the", "of",   "in", "on",  "at",
                                            "by", "with", "and", "or",  "to", "is",  "are",
                                            "it", "its",  "this", "that", "for"};
    return v;
}

std::string strip_punct(const std::string& word) {
    std::string out;
    for (char c : word)
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') out += c;
    return out;
}

std::string escape_payload(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else out += c;
    }
    return out;
}

std::string find_field(const std::string& content, const std::string& key) {
    for (const auto& line : split(content, '\n')) {
        if (line.rfind(key, 0) == 0) return trim(line.substr(key.size()));
    }
    return "";
}

}  // namespace

RuleBackend::RuleBackend(EmotionModel model) : model_(std::move(model)) {}

const std::vector<std::string>& RuleBackend::emotion_phrases() {
    // Concrete, renderable detail; wording leans on the emotion lexicons so
    // the keyword scorer recognizes the rewrite.
    static const std::vector<std::string> v = {
        "with bright confetti, playful streamers and dancing balloons",
        "beneath towering golden clouds and a vast glowing horizon",
        "in soft warm sunlight with calm water and gentle meadows",
        "ablaze with vivid fireworks, sparks and rushing motion",
        "under a stormy red sky with harsh lightning and burning embers",
        "covered in murky slime, rotting debris and swarming flies",
        "shrouded in cold fog with looming shadows and a pale moon",
        "in gray drizzle with dim light, wilted flowers and empty streets"};
    return v;
}

std::string RuleBackend::generate(const std::string& system, const std::string& user,
                                  uint64_t seed) {
    return generate_as("", system, user, seed);
}

std::string RuleBackend::generate_as(const std::string& actor, const std::string& system,
                                     const std::string& user, uint64_t seed) {
    if (actor.rfind("extractor", 0) == 0) {
        // content words of the source prompt, comma-separated
        std::vector<std::string> words;
        for (const auto& w : split_ws(to_lower(user))) {
            const std::string clean = strip_punct(w);
            if (clean.empty() || stopwords().count(clean)) continue;
            words.push_back(clean);
        }
        std::string out;
        for (size_t i = 0; i < words.size(); ++i) out += (i ? ", " : "") + words[i];
        return out;
    }
    if (actor.rfind("persona", 0) == 0) {
        const std::string concepts = find_field(user, "concepts:");
        const std::string emotion = find_field(user, "emotion:");
        // short fingerprint keeps distinct personas' texts distinct
        const uint64_t fp = hash_str(system, seed) % 997;
        return "seeing " + concepts + " stirs " + emotion + " in me (view " +
               std::to_string(fp) + ")";
    }
    if (actor == "rewriter") {
        const std::string source = find_field(user, "source:");
        const std::string emotion = find_field(user, "emotion:");
        const int e = model_.index_of(emotion);
        if (source.empty() || e < 0) return source;
        return source + ", " + emotion_phrases()[size_t(e)];
    }
    // unknown actor: echo the user content
    (void)seed;
    return user;
}

void ScriptedBackend::push(const std::string& actor, std::string response) {
    queues_[actor].push_back(std::move(response));
}

ScriptedBackend ScriptedBackend::from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    ScriptedBackend backend;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("script line " + std::to_string(line_no) +
                             ": expected actor<TAB>payload");
        backend.push(line.substr(0, tab), line.substr(tab + 1));
    }
    return backend;
}

std::string ScriptedBackend::generate(const std::string& system, const std::string& user,
                                      uint64_t seed) {
    return generate_as("", system, user, seed);
}

std::string ScriptedBackend::generate_as(const std::string& actor, const std::string&,
                                         const std::string&, uint64_t) {
    auto it = queues_.find(actor);
    if (it == queues_.end() || it->second.empty()) {
        it = queues_.find("");  // wildcard queue
        if (it == queues_.end() || it->second.empty())
            throw BackendError("scripted backend: no response left for actor '" + actor + "'");
    }
    std::string out = std::move(it->second.front());
    it->second.pop_front();
    return out;
}

std::string Persona::describe() const {
    return std::to_string(age) + "-year-old " + gender + " " + profession;
}

std::array<Persona, 3> sample_personas(const PersonaPools& pools, Rng& rng) {
    if (pools.ages.size() < 3 || pools.genders.size() < 3 || pools.professions.size() < 3)
        throw InvalidInput("sample_personas: every pool needs at least 3 entries");
    auto pick3 = [&rng](size_t n) {
        std::array<size_t, 3> out{};
        std::vector<size_t> idx(n);
        for (size_t i = 0; i < n; ++i) idx[i] = i;
        for (int k = 0; k < 3; ++k) {
            const size_t j = k + size_t(rng.below(uint64_t(n - size_t(k))));
            std::swap(idx[size_t(k)], idx[j]);
            out[size_t(k)] = idx[size_t(k)];
        }
        return out;
    };
    const auto ai = pick3(pools.ages.size());
    const auto gi = pick3(pools.genders.size());
    const auto pi = pick3(pools.professions.size());
    std::array<Persona, 3> out;
    for (int k = 0; k < 3; ++k)
        out[size_t(k)] = {pools.ages[ai[size_t(k)]], pools.genders[gi[size_t(k)]],
                          pools.professions[pi[size_t(k)]]};
    return out;
}

std::string ConceptSet::joined() const {
    std::string out;
    for (size_t i = 0; i < concepts.size(); ++i) out += (i ? ", " : "") + concepts[i];
    return out;
}

ConceptSet extract_concepts(const std::string& source, TextBackend& backend, uint64_t seed) {
    if (source.empty()) throw InvalidInput("extract_concepts: empty source");
    const std::string system_base =
        "You extract the concrete visual concepts (humans, animals, objects, landscapes) "
        "from the user's prompt. Answer with a comma-separated list only.";

    std::vector<std::string> order;           // first-appearance order
    std::map<std::string, int> counts;
    for (int agent = 0; agent < 3; ++agent) {
        const std::string response = backend.generate_as(
            "extractor." + std::to_string(agent),
            system_base + " You are extraction agent " + std::to_string(agent) + ".", source,
            hash_combine(seed, uint64_t(agent)));
        std::set<std::string> seen_here;
        for (auto& piece : split(response, ',')) {
            for (auto& sub : split(piece, '\n')) {
                const std::string item = to_lower(trim(sub));
                if (item.empty() || !seen_here.insert(item).second) continue;
                if (counts.find(item) == counts.end()) order.push_back(item);
                ++counts[item];
            }
        }
    }

    ConceptSet majority, all;
    for (const auto& c : order) {
        all.concepts.push_back(c);
        all.proposer_counts.push_back(counts[c]);
        if (counts[c] >= 2) {
            majority.concepts.push_back(c);
            majority.proposer_counts.push_back(counts[c]);
        }
    }
    if (!majority.empty()) return majority;
    if (!all.empty()) return all;  // union fallback
    throw ExtractionError("extract_concepts: no concepts found for '" + source + "'");
}

std::vector<Attribution> attribute_emotion(const ConceptSet& concepts, int emotion,
                                           const EmotionModel& model,
                                           const std::array<Persona, 3>& personas,
                                           const std::string& source, TextBackend& backend,
                                           uint64_t seed) {
    if (concepts.empty()) throw InvalidInput("attribute_emotion: empty concept set");
    if (emotion < 0 || emotion >= model.count())
        throw InvalidInput("attribute_emotion: invalid emotion id");
    const std::string user = "source: " + source + "\nemotion: " + model.names[size_t(emotion)] +
                             "\nconcepts: " + concepts.joined();
    std::vector<Attribution> out;
    out.reserve(3);
    for (int k = 0; k < 3; ++k) {
        const Persona& p = personas[size_t(k)];
        const std::string system =
            "You are a " + p.describe() +
            ". Drawing on your background, describe what could make these visual concepts evoke " +
            model.names[size_t(emotion)] + " when reading the prompt.";
        out.push_back({p, backend.generate_as("persona." + std::to_string(k), system, user,
                                              hash_combine(seed, uint64_t(k)))});
    }
    return out;
}

RewriteOutput rewrite_prompt(const std::string& source, int emotion, const EmotionModel& model,
                             const ConceptSet& concepts,
                             const std::vector<Attribution>& attributions, TextBackend& backend,
                             uint64_t seed) {
    if (emotion < 0 || emotion >= model.count())
        throw InvalidInput("rewrite_prompt: invalid emotion id");
    const std::string& emotion_name = model.names[size_t(emotion)];
    std::string system = "Rewrite the prompt so the image it describes clearly evokes " +
                         emotion_name +
                         ". The rewrite must not conflict with or omit the meaning of the source "
                         "prompt. Keep every one of these visual concepts visible: " +
                         concepts.joined() +
                         ". Prefer concrete visual detail over abstract wording; stay under 70 "
                         "words.";
    std::string user = "source: " + source + "\nemotion: " + emotion_name +
                       "\nconcepts: " + concepts.joined() + "\nattributions:";
    for (const auto& attr : attributions)
        user += "\n- " + attr.persona.describe() + ": " + attr.text;

    RewriteOutput out;
    out.instruction = system + "\n" + user;
    out.candidate = backend.generate_as("rewriter", system, user, seed);
    return out;
}

std::string CheckReport::summary() const {
    auto flag = [](bool b) { return b ? "pass" : "fail"; };
    std::string s;
    s += "semantic=" + format_double(semantic_score) + ":" + flag(semantic_pass);
    s += " coherence=" + std::string(flag(coherence_pass));
    s += " emotion=" + format_double(emotion_score) + ":" + flag(emotion_pass);
    s += " abstractness=" + format_double(abstractness) + ":" + flag(abstractness_pass);
    s += " visual=" + format_double(visual_score) + ":" + flag(visual_pass);
    s += " tokens=" + std::to_string(token_count) + ":" + flag(length_ok);
    s += " overall=" + std::string(flag(overall));
    return s;
}

CheckReport check(const std::string& candidate, const std::string& source, int emotion,
                  const CheckScorers& scorers, const CheckThresholds& thresholds) {
    CheckReport r;
    r.semantic_score = scorers.semantic ? scorers.semantic(source, candidate) : 0.0;
    r.semantic_pass = r.semantic_score >= thresholds.semantic_min;
    r.coherence_pass = scorers.coherence ? scorers.coherence(candidate) : true;
    r.emotion_score = scorers.emotion ? scorers.emotion(candidate, emotion) : 0.0;
    r.emotion_pass = r.emotion_score >= thresholds.emotion_min;
    r.abstractness = scorers.abstractness ? scorers.abstractness(candidate) : 0.0;
    r.abstractness_pass = r.abstractness <= thresholds.abstractness_max;
    r.visual_score = scorers.visual ? scorers.visual(candidate) : 0.0;
    r.visual_pass = r.visual_score >= thresholds.visual_min;
    r.token_count = int(split_ws(candidate).size());
    r.length_ok = r.token_count < thresholds.max_tokens;
    r.overall = r.semantic_pass && r.coherence_pass && r.emotion_pass && r.abstractness_pass &&
                r.visual_pass && r.length_ok;
    return r;
}

std::set<std::string> load_word_list(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open word list: " + path);
    std::set<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        const std::string w = to_lower(trim(line));
        if (!w.empty()) out.insert(w);
    }
    return out;
}

EmotionLexicon EmotionLexicon::load(const std::string& dir, const EmotionModel& model) {
    EmotionLexicon lex;
    lex.words.reserve(size_t(model.count()));
    for (const auto& name : model.names) lex.words.push_back(load_word_list(dir + "/" + name + ".txt"));
    return lex;
}

CheckScorers make_default_scorers(const TextEncoder& text_enc, const VisualEncoder& visual_enc,
                                  const CrossModalScorer& xmodal, const EmotionLexicon& lexicon,
                                  const std::set<std::string>& abstract_words,
                                  const DenoiserModel* probe_model,
                                  const DefaultScorerConfig& cfg) {
    CheckScorers s;
    s.semantic = [&text_enc](const std::string& source, const std::string& candidate) {
        return cosine(text_enc.encode(source), text_enc.encode(candidate));
    };
    s.coherence = [](const std::string&) { return true; };
    s.emotion = [&lexicon](const std::string& candidate, int emotion) {
        if (emotion < 0 || emotion >= int(lexicon.words.size()))
            throw InvalidInput("emotion scorer: invalid emotion id");
        int hits = 0;
        for (const auto& w : split_ws(to_lower(candidate)))
            if (lexicon.words[size_t(emotion)].count(strip_punct(w))) ++hits;
        return std::min(1.0, 0.5 * double(hits));
    };
    s.abstractness = [&abstract_words](const std::string& candidate) {
        const auto tokens = split_ws(to_lower(candidate));
        if (tokens.empty()) return 0.0;
        int hits = 0;
        for (const auto& w : tokens)
            if (abstract_words.count(strip_punct(w))) ++hits;
        return double(hits) / double(tokens.size());
    };
    if (probe_model) {
        const DenoiserModel* model = probe_model;
        const int probes = cfg.probes;
        const NoiseSchedule sched = make_schedule(cfg.probe_steps, 1e-4, 0.06);
        const uint64_t seed = cfg.seed;
        s.visual = [model, probes, sched, seed, &text_enc, &visual_enc,
                    &xmodal](const std::string& candidate) {
            Condition cond;
            cond.text_tokens = build_text_tokens(text_enc, candidate, model->cfg.cond_tokens);
            cond.visual = VisualPrompt::zeros(model->cfg.cond_tokens, model->cfg.d_visual);
            const std::vector<double> text_emb = text_enc.encode(candidate);
            const uint64_t base = hash_combine(seed, hash_str(candidate));
            double total = 0.0;
            for (int k = 0; k < probes; ++k) {
                const Image probe = sample(*model, cond, sched, hash_combine(base, uint64_t(k)));
                total += xmodal.similarity(text_emb, visual_enc.encode(probe));
            }
            return total / double(probes);
        };
    } else {
        s.visual = [](const std::string&) { return 0.5; };
    }
    return s;
}

RewriteSession orchestrate(const std::string& source, int emotion, const EmotionModel& model,
                           TextBackend& backend, const CheckScorers& scorers,
                           const CheckThresholds& thresholds, uint64_t seed,
                           const PersonaPools& pools) {
    if (emotion < 0 || emotion >= model.count())
        throw InvalidInput("orchestrate: invalid emotion id");

    RewriteSession session;
    session.source = source;
    session.emotion = emotion;
    session.seed = seed;

    auto log = [&session](int round, const std::string& proc, const std::string& actor,
                          const std::string& payload) {
        session.transcript.push_back(std::to_string(round) + "\t" + proc + "\t" + actor + "\t" +
                                     escape_payload(payload));
    };

    try {
        session.concepts = extract_concepts(source, backend, hash_combine(seed, 0xc0ceULL));
    } catch (const std::runtime_error& err) {
        session.accepted = false;
        session.discard_reason = std::string("extraction failed: ") + err.what();
        log(1, "extract", "vote", session.discard_reason);
        log(1, "outcome", "session", "discarded: " + session.discard_reason);
        return session;
    }
    log(1, "extract", "vote", session.concepts.joined());

    for (int round = 1; round <= 3; ++round) {
        const uint64_t round_seed = hash_combine(seed, uint64_t(round));
        RewriteRound rec;
        bool round_failed = false;
        try {
            Rng persona_rng(hash_combine(round_seed, 0x9e45ULL));
            rec.personas = sample_personas(pools, persona_rng);
            rec.attributions =
                attribute_emotion(session.concepts, emotion, model, rec.personas, source, backend,
                                  hash_combine(round_seed, 0xa77ULL));
            for (int k = 0; k < 3; ++k)
                log(round, "attribute", "persona." + std::to_string(k),
                    rec.personas[size_t(k)].describe() + ": " + rec.attributions[size_t(k)].text);

            const RewriteOutput rewrite =
                rewrite_prompt(source, emotion, model, session.concepts, rec.attributions, backend,
                               hash_combine(round_seed, 0x3e3ULL));
            rec.instruction = rewrite.instruction;
            rec.candidate = rewrite.candidate;
            log(round, "rewrite", "instruction", rewrite.instruction);
            log(round, "rewrite", "rewriter", rewrite.candidate);
        } catch (const BackendError& err) {
            round_failed = true;
            log(round, "error", "backend", err.what());
        }

        if (!round_failed) {
            rec.report = check(rec.candidate, source, emotion, scorers, thresholds);
            log(round, "check", "checker", rec.report.summary());
        }
        session.rounds.push_back(std::move(rec));

        if (!round_failed && session.rounds.back().report.overall) {
            session.accepted = true;
            session.final_prompt = session.rounds.back().candidate;
            log(round, "outcome", "session", "accepted: " + session.final_prompt);
            return session;
        }
    }

    session.accepted = false;
    session.discard_reason = "no candidate passed checking in 3 rounds";
    log(3, "outcome", "session", "discarded: " + session.discard_reason);
    return session;
}

void save_transcript(const std::string& path, const RewriteSession& session) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& line : session.transcript) f << line << "\n";
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace emodir
