#include "emodir/pipeline.hpp"

#include <fstream>
#include <map>

#include "emodir/strutil.hpp"
#include "emodir/threading.hpp"

namespace emodir {

namespace {

std::string escape_line(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else out += c;
    }
    return out;
}

std::string unescape_line(const std::string& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            ++i;
            if (s[i] == 't') out += '\t';
            else if (s[i] == 'n') out += '\n';
            else out += s[i];
        } else {
            out += s[i];
        }
    }
    return out;
}

Condition make_generation_condition(const PipelineContext& ctx, const std::string& prompt,
                                    int emotion, bool use_visual, std::vector<int>* indices) {
    Condition cond;
    cond.emotion = emotion;
    cond.text_tokens = build_text_tokens(*ctx.text_enc, prompt, ctx.model->cfg.cond_tokens);
    if (use_visual) {
        const std::vector<double> query = ctx.text_enc->encode(prompt);
        cond.visual = retrieve(*ctx.bank, query, emotion, ctx.model->cfg.cond_tokens);
        if (indices) *indices = cond.visual.source_indices;
    } else {
        cond.visual =
            VisualPrompt::zeros(ctx.model->cfg.cond_tokens, ctx.model->cfg.d_visual, emotion);
    }
    return cond;
}

}  // namespace

GenerationResult generate(const PipelineContext& ctx, const GenerationRequest& req) {
    if (!ctx.model || !ctx.sched || !ctx.bank || !ctx.text_enc)
        throw InvalidInput("generate: pipeline context incomplete");
    if (req.prompt.empty()) throw InvalidInput("generate: empty prompt");
    if (req.emotion < 0 || req.emotion >= ctx.bank->model.count())
        throw InvalidInput("generate: invalid emotion id");

    GenerationResult out;
    out.provenance.source_prompt = req.prompt;
    out.provenance.emotion = req.emotion;
    out.provenance.seed = req.seed;
    out.provenance.use_rewriter = req.use_rewriter;
    out.provenance.use_visual_prompt = req.use_visual_prompt;
    out.provenance.config_hash = ctx.config_hash;

    std::string prompt = req.prompt;
    if (req.use_rewriter) {
        if (!ctx.backend || !ctx.scorers)
            throw InvalidInput("generate: rewriter requested but no backend/scorers configured");
        out.provenance.session_seed = hash_combine(req.seed, 0x5e5510ULL);
        const RewriteSession session =
            orchestrate(req.prompt, req.emotion, ctx.bank->model, *ctx.backend, *ctx.scorers,
                        ctx.thresholds, out.provenance.session_seed);
        if (session.accepted) {
            prompt = session.final_prompt;
        } else {
            out.provenance.rewriter_discarded = true;  // fall back to the source prompt
        }
    }
    out.provenance.final_prompt = prompt;

    const Condition cond = make_generation_condition(ctx, prompt, req.emotion,
                                                     req.use_visual_prompt,
                                                     &out.provenance.bank_indices);
    out.image = sample(*ctx.model, cond, *ctx.sched, req.seed);
    return out;
}

GenerationResult regenerate(const PipelineContext& ctx, const Provenance& prov) {
    if (!ctx.model || !ctx.sched || !ctx.bank || !ctx.text_enc)
        throw InvalidInput("regenerate: pipeline context incomplete");
    GenerationResult out;
    out.provenance = prov;
    const Condition cond = make_generation_condition(ctx, prov.final_prompt, prov.emotion,
                                                     prov.use_visual_prompt, nullptr);
    out.image = sample(*ctx.model, cond, *ctx.sched, prov.seed);
    return out;
}

void save_provenance(const std::string& path, const Provenance& prov) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << "source_prompt\t" << escape_line(prov.source_prompt) << "\n";
    f << "final_prompt\t" << escape_line(prov.final_prompt) << "\n";
    f << "emotion\t" << prov.emotion << "\n";
    f << "seed\t" << prov.seed << "\n";
    f << "use_rewriter\t" << (prov.use_rewriter ? 1 : 0) << "\n";
    f << "use_visual_prompt\t" << (prov.use_visual_prompt ? 1 : 0) << "\n";
    f << "rewriter_discarded\t" << (prov.rewriter_discarded ? 1 : 0) << "\n";
    f << "session_seed\t" << prov.session_seed << "\n";
    f << "bank_indices\t";
    for (size_t i = 0; i < prov.bank_indices.size(); ++i)
        f << (i ? "," : "") << prov.bank_indices[i];
    f << "\n";
    f << "config_hash\t" << prov.config_hash << "\n";
    if (!f) throw IoError("write failed: " + path);
}

Provenance load_provenance(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw ParseError("provenance line " + std::to_string(line_no) + ": expected key<TAB>value");
        kv[line.substr(0, tab)] = line.substr(tab + 1);
    }
    auto need = [&kv, &path](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("provenance missing key '" + key + "': " + path);
        return it->second;
    };
    Provenance p;
    p.source_prompt = unescape_line(need("source_prompt"));
    p.final_prompt = unescape_line(need("final_prompt"));
    p.emotion = int(parse_long(need("emotion")));
    p.seed = uint64_t(std::stoull(need("seed")));
    p.use_rewriter = need("use_rewriter") == "1";
    p.use_visual_prompt = need("use_visual_prompt") == "1";
    p.rewriter_discarded = need("rewriter_discarded") == "1";
    p.session_seed = uint64_t(std::stoull(need("session_seed")));
    const std::string idx = need("bank_indices");
    if (!idx.empty())
        for (const auto& part : split(idx, ','))
            if (!part.empty()) p.bank_indices.push_back(int(parse_long(part)));
    p.config_hash = uint64_t(std::stoull(need("config_hash")));
    return p;
}

std::vector<EvalRow> evaluate(const PipelineContext& ctx,
                              const std::vector<GenerationRequest>& requests,
                              const std::vector<EvalConfiguration>& configs,
                              const VisualEncoder& visual_enc, const CrossModalScorer& xmodal) {
    std::vector<EvalRow> rows;
    for (const auto& config : configs) {
        EvalRow row;
        row.config = config.name;
        row.count = int(requests.size());
        if (requests.empty()) {
            rows.push_back(row);
            continue;
        }
        std::vector<int> correct(requests.size(), 0);
        std::vector<double> consistency(requests.size(), 0.0);
        parallel_for(int(requests.size()), [&](int i) {
            GenerationRequest req = requests[size_t(i)];
            req.use_rewriter = config.use_rewriter;
            req.use_visual_prompt = config.use_visual_prompt;
            const GenerationResult res = generate(ctx, req);
            correct[size_t(i)] = emotion_classify_toy(res.image) == req.emotion ? 1 : 0;
            consistency[size_t(i)] = xmodal.similarity(ctx.text_enc->encode(req.prompt),
                                                       visual_enc.encode(res.image));
        });
        double acc = 0.0, cons = 0.0;
        for (size_t i = 0; i < requests.size(); ++i) {
            acc += correct[i];
            cons += consistency[i];
        }
        row.emotion_accuracy = acc / double(requests.size());
        row.mean_consistency = cons / double(requests.size());
        rows.push_back(row);
    }
    return rows;
}

std::vector<PreferenceExample> pairs_to_examples(const std::vector<CandidateGroup>& groups,
                                                 const std::vector<PreferencePairRecord>& records) {
    std::map<std::string, const ScoredCandidate*> by_path;
    for (const auto& g : groups)
        for (const auto& c : g.candidates)
            if (!c.image_path.empty()) by_path[c.image_path] = &c;
    std::vector<PreferenceExample> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        auto chosen = by_path.find(rec.chosen_path);
        auto rejected = by_path.find(rec.rejected_path);
        if (chosen == by_path.end() || rejected == by_path.end())
            throw InvalidInput("pairs_to_examples: record path not found among candidates");
        out.push_back({rec.prompt, rec.emotion, chosen->second->image, rejected->second->image});
    }
    return out;
}

std::vector<PreferenceExample> load_preference_examples(const std::string& pref_path) {
    std::vector<PreferenceExample> out;
    for (const auto& rec : load_preference_file(pref_path))
        out.push_back({rec.prompt, rec.emotion, read_ppm(rec.chosen_path),
                       read_ppm(rec.rejected_path)});
    return out;
}

}  // namespace emodir
