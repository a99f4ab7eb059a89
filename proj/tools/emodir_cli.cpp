// Command-line front door: bank building, pretraining, preference training,
// sampling, rewriting, toy-data generation, evaluation and self-checks.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "emodir/config.hpp"
#include "emodir/dataset.hpp"
#include "emodir/dpo.hpp"
#include "emodir/pipeline.hpp"
#include "emodir/strutil.hpp"

namespace fs = std::filesystem;
using namespace emodir;

namespace {

struct Common {
    std::string config_path;
    uint64_t seed = 0;
};

Config resolve_config(const Common& common) {
    Config cfg;
    if (!common.config_path.empty()) cfg.apply_json_file(common.config_path);
    std::cerr << "config_hash=" << cfg.hash() << "\n";
    return cfg;
}

int parse_emotion(const std::string& text, const EmotionModel& model) {
    const int by_name = model.index_of(to_lower(text));
    if (by_name >= 0) return by_name;
    try {
        const long id = parse_long(text);
        if (id >= 0 && id < model.count()) return int(id);
    } catch (const ParseError&) {
    }
    throw InvalidInput("unknown emotion '" + text + "'");
}

std::string image_path_for(const std::string& dir, const std::string& id) {
    return dir + "/" + id + ".ppm";
}

// Bundles everything the sampling/eval/rewrite paths share.
struct LoadedPipeline {
    Config cfg;
    DenoiserModel model;
    NoiseSchedule sched;
    PromptBank bank;
    StubTextEncoder text_enc;
    StubVisualEncoder visual_enc;
    CrossModalScorer xmodal;
    EmotionLexicon lexicon;
    std::set<std::string> abstract_words;
    RuleBackend backend;
    CheckScorers scorers;
    PipelineContext ctx;

    LoadedPipeline(const Config& config, const std::string& model_path,
                   const std::string& bank_path)
        : cfg(config),
          model(load_checkpoint(model_path)),
          sched(make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end)),
          bank(load_bank(bank_path)),
          text_enc(cfg.d_text, cfg.text_seed),
          visual_enc(cfg.d_visual, cfg.visual_seed),
          xmodal(cfg.d_text, cfg.d_visual, cfg.xmodal_seed),
          lexicon(EmotionLexicon::load(cfg.lexicon_dir, bank.model)),
          abstract_words(load_word_list(cfg.abstract_words_path)),
          backend(bank.model) {
        scorers = make_default_scorers(text_enc, visual_enc, xmodal, lexicon, abstract_words,
                                       &model, cfg.scorer_config());
        ctx.model = &model;
        ctx.sched = &sched;
        ctx.bank = &bank;
        ctx.text_enc = &text_enc;
        ctx.backend = &backend;
        ctx.scorers = &scorers;
        ctx.thresholds = cfg.thresholds();
        ctx.config_hash = cfg.hash();
    }
};

int cmd_make_toy_data(const Common& common, const std::string& out_dir, int n_per_emotion) {
    const Config cfg = resolve_config(common);
    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const StubVisualEncoder visual_enc(cfg.d_visual, cfg.visual_seed);
    const ToyDataset data =
        build_toy_dataset(n_per_emotion, common.seed, text_enc, visual_enc, cfg.image_size);

    fs::create_directories(out_dir + "/images");
    FixtureFile fixture{EmotionModel::mikels8().count(), cfg.d_text, cfg.d_visual, data.records};
    save_fixture_records(out_dir + "/records.edrec", fixture);
    for (size_t i = 0; i < data.records.size(); ++i)
        write_ppm(image_path_for(out_dir + "/images", data.records[i].id), data.images[i]);
    std::cout << "wrote " << data.records.size() << " records to " << out_dir << "\n";
    return 0;
}

int cmd_bank_build(const Common& common, const std::string& data_path, const std::string& out,
                   std::optional<int> clusters) {
    Config cfg = resolve_config(common);
    if (clusters) cfg.bank_clusters = *clusters;
    const FixtureFile fixture = load_fixture_file(data_path);
    const PromptBank bank = build_bank(fixture.records, EmotionModel::mikels8(),
                                       cfg.bank_clusters, common.seed);
    save_bank(out, bank);
    std::cout << "bank: " << bank.model.count() << " emotions x " << bank.clusters_per_emotion
              << " clusters (d_text=" << bank.d_text << ", d_visual=" << bank.d_visual << ") -> "
              << out << "\n";
    return 0;
}

int cmd_bank_inspect(const std::string& bank_path) {
    const PromptBank bank = load_bank(bank_path);
    std::cout << "emotions=" << bank.model.count() << " clusters=" << bank.clusters_per_emotion
              << " d_text=" << bank.d_text << " d_visual=" << bank.d_visual << "\n";
    for (int e = 0; e < bank.model.count(); ++e) {
        double text_norm = 0.0, visual_norm = 0.0;
        for (double x : bank.text_centers[size_t(e)].v) text_norm += x * x;
        for (double x : bank.visual_centers[size_t(e)].v) visual_norm += x * x;
        std::cout << bank.model.names[size_t(e)] << "\ttext_fro=" << format_double(std::sqrt(text_norm))
                  << "\tvisual_fro=" << format_double(std::sqrt(visual_norm)) << "\n";
    }
    return 0;
}

std::vector<PretrainExample> load_pretrain_examples(const std::string& data_path,
                                                    const std::string& image_dir) {
    std::vector<PretrainExample> out;
    for (const auto& rec : load_fixture_records(data_path))
        out.push_back({rec.text, rec.emotion, read_ppm(image_path_for(image_dir, rec.id))});
    return out;
}

int cmd_pretrain(const Common& common, const std::string& data_path, const std::string& image_dir,
                 const std::string& out, std::optional<int> steps, std::optional<double> lr,
                 const std::string& metrics_path) {
    const Config cfg = resolve_config(common);
    TrainerConfig tcfg = cfg.trainer_config(common.seed);
    if (steps) tcfg.steps = *steps;
    if (lr) tcfg.learning_rate = *lr;

    DenoiserModel model = DenoiserModel::init(cfg.model_config(), common.seed);
    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const auto data = load_pretrain_examples(data_path, image_dir);
    const auto metrics = reference_pretrain(model, data, tcfg, text_enc);
    save_checkpoint(out, model);
    if (!metrics_path.empty()) save_metrics(metrics_path, metrics);
    if (!metrics.empty())
        std::cout << "pretrain: " << metrics.size() << " steps, first loss "
                  << format_double(metrics.front().loss) << ", last loss "
                  << format_double(metrics.back().loss) << "\n";
    std::cout << "checkpoint -> " << out << "\n";
    return 0;
}

int cmd_make_pairs(const Common& common, const std::string& data_path, const std::string& out_dir,
                   const std::string& pairs_path, int n_prompts, int per_band) {
    const Config cfg = resolve_config(common);
    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const StubVisualEncoder visual_enc(cfg.d_visual, cfg.visual_seed);
    const CrossModalScorer xmodal(cfg.d_text, cfg.d_visual, cfg.xmodal_seed);

    // distinct prompts in record order
    std::vector<std::string> prompts;
    std::set<std::string> seen;
    for (const auto& rec : load_fixture_records(data_path)) {
        if (int(prompts.size()) >= n_prompts) break;
        if (seen.insert(rec.text).second) prompts.push_back(rec.text);
    }
    if (int(prompts.size()) < n_prompts)
        throw InvalidInput("make-pairs: records hold only " + std::to_string(prompts.size()) +
                           " distinct prompts");

    fs::create_directories(out_dir);
    const auto groups = make_candidate_groups(prompts, EmotionModel::mikels8().count(), per_band,
                                              common.seed, text_enc, visual_enc, xmodal, out_dir,
                                              cfg.image_size);
    const auto records = select_preference_pairs(groups);
    save_preference_file(pairs_path, records);
    std::cout << "pairs: " << records.size() << " from " << groups.size() << " groups -> "
              << pairs_path << "\n";
    return 0;
}

int cmd_train_dpo(const Common& common, const std::string& ref_path, const std::string& pairs_path,
                  const std::string& bank_path, const std::string& out,
                  const std::string& bank_out, const std::string& metrics_path,
                  std::optional<int> steps, std::optional<double> lr,
                  std::optional<double> beta) {
    const Config cfg = resolve_config(common);
    TrainerConfig tcfg = cfg.trainer_config(common.seed);
    if (steps) tcfg.steps = *steps;
    if (lr) tcfg.learning_rate = *lr;
    if (beta) tcfg.beta = *beta;

    const DenoiserModel ref = load_checkpoint(ref_path);
    DenoiserModel theta = ref;
    PromptBank bank = load_bank(bank_path);
    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const auto pairs = load_preference_examples(pairs_path);

    const TrainResult result = train(theta, ref, pairs, bank, tcfg, text_enc);
    save_checkpoint(out, theta);
    save_bank(bank_out, bank);
    if (!metrics_path.empty()) save_metrics(metrics_path, result.metrics);
    if (!result.metrics.empty())
        std::cout << "train: " << result.metrics.size() << " steps, final loss "
                  << format_double(result.metrics.back().loss) << ", final margin "
                  << format_double(result.metrics.back().margin) << "\n";
    std::cout << "checkpoint -> " << out << ", bank -> " << bank_out << "\n";
    return 0;
}

int cmd_sample(const Common& common, const std::string& model_path, const std::string& bank_path,
               const std::string& prompt, const std::string& emotion_text, const std::string& out,
               bool no_rewriter, bool no_visual, const std::string& provenance_path) {
    const Config cfg = resolve_config(common);
    LoadedPipeline pipe(cfg, model_path, bank_path);

    GenerationRequest req;
    req.prompt = prompt;
    req.emotion = parse_emotion(emotion_text, pipe.bank.model);
    req.seed = common.seed;
    req.use_rewriter = !no_rewriter;
    req.use_visual_prompt = !no_visual;

    const GenerationResult result = generate(pipe.ctx, req);
    write_ppm(out, result.image);
    save_provenance(provenance_path.empty() ? out + ".provenance.txt" : provenance_path,
                    result.provenance);
    std::cout << "prompt used: " << result.provenance.final_prompt << "\n";
    std::cout << "image -> " << out << "\n";
    return 0;
}

int cmd_rewrite(const Common& common, const std::string& prompt, const std::string& emotion_text,
                const std::string& script_path, const std::string& transcript_path) {
    const Config cfg = resolve_config(common);
    const EmotionModel model = EmotionModel::mikels8();
    const int emotion = parse_emotion(emotion_text, model);

    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const StubVisualEncoder visual_enc(cfg.d_visual, cfg.visual_seed);
    const CrossModalScorer xmodal(cfg.d_text, cfg.d_visual, cfg.xmodal_seed);
    const EmotionLexicon lexicon = EmotionLexicon::load(cfg.lexicon_dir, model);
    const auto abstract_words = load_word_list(cfg.abstract_words_path);
    // no probe model here: the visual check runs its neutral stub
    const CheckScorers scorers = make_default_scorers(text_enc, visual_enc, xmodal, lexicon,
                                                      abstract_words, nullptr);

    RuleBackend rule_backend(model);
    ScriptedBackend scripted;
    TextBackend* backend = &rule_backend;
    if (!script_path.empty()) {
        scripted = ScriptedBackend::from_file(script_path);
        backend = &scripted;
    }

    const RewriteSession session = orchestrate(prompt, emotion, model, *backend, scorers,
                                               cfg.thresholds(), common.seed);
    if (!transcript_path.empty()) save_transcript(transcript_path, session);
    if (session.accepted) {
        std::cout << session.final_prompt << "\n";
        return 0;
    }
    std::cout << "discarded: " << session.discard_reason << "\n";
    return 0;
}

int cmd_eval(const Common& common, const std::string& model_path, const std::string& bank_path,
             int n_prompts, const std::string& configs_text, const std::string& out) {
    const Config cfg = resolve_config(common);
    LoadedPipeline pipe(cfg, model_path, bank_path);

    std::vector<GenerationRequest> requests;
    Rng rng(common.seed);
    for (int i = 0; i < n_prompts; ++i) {
        const std::string prompt = toy_prompt(int(rng.below(uint64_t(toy_prompt_pool_size()))));
        for (int e = 0; e < pipe.bank.model.count(); ++e) {
            GenerationRequest req;
            req.prompt = prompt;
            req.emotion = e;
            req.seed = hash_combine(common.seed, uint64_t(i * 8 + e));
            requests.push_back(std::move(req));
        }
    }

    std::vector<EvalConfiguration> configs;
    for (const auto& name : split(configs_text, ',')) {
        if (name == "full") configs.push_back({"full", true, true});
        else if (name == "ablation") configs.push_back({"ablation", false, false});
        else if (name == "no-rewriter") configs.push_back({"no-rewriter", false, true});
        else if (name == "no-visual") configs.push_back({"no-visual", true, false});
        else throw InvalidInput("unknown eval configuration '" + name + "'");
    }

    const auto rows = evaluate(pipe.ctx, requests, configs, pipe.visual_enc, pipe.xmodal);
    std::ofstream f(out, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + out);
    f << "config\temo_accuracy\tmean_consistency\tcount\n";
    for (const auto& row : rows) {
        f << row.config << "\t" << format_double(row.emotion_accuracy) << "\t"
          << format_double(row.mean_consistency) << "\t" << row.count << "\n";
        std::cout << row.config << ": emo_accuracy=" << format_double(row.emotion_accuracy)
                  << " mean_consistency=" << format_double(row.mean_consistency)
                  << " n=" << row.count << "\n";
    }
    return 0;
}

int cmd_gradcheck(const Common& common) {
    const Config cfg = resolve_config(common);

    // small instance keeps the finite-difference sweep quick
    ModelConfig mc = cfg.model_config();
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);
    TrainerConfig tcfg = cfg.trainer_config(common.seed);
    tcfg.beta = 0.05;  // keep the logistic away from saturation for the probe
    tcfg.timesteps = cfg.timesteps;

    const StubTextEncoder text_enc(cfg.d_text, cfg.text_seed);
    const StubVisualEncoder visual_enc(cfg.d_visual, cfg.visual_seed);
    const ToyDataset data =
        build_toy_dataset(mc.cond_tokens, common.seed, text_enc, visual_enc, mc.image_size);
    const PromptBank bank0 =
        build_bank(data.records, EmotionModel::mikels8(), mc.cond_tokens, common.seed);

    DenoiserModel ref = DenoiserModel::init(mc, hash_combine(common.seed, 1));
    DenoiserModel theta = DenoiserModel::init(mc, hash_combine(common.seed, 2));
    // give the low-rank branch signal so its gradients are exercised
    for (auto& blk : theta.blocks) {
        Rng r(hash_combine(common.seed, 3));
        for (Matrix* b : {&blk.cross.bq, &blk.cross.bk, &blk.cross.bv})
            for (double& x : b->v) x = r.normal() * 0.05;
    }

    std::vector<PreferenceExample> pairs;
    Rng rng(hash_combine(common.seed, 4));
    for (int i = 0; i < 2; ++i) {
        PreferenceExample ex;
        ex.prompt = data.records[size_t(i)].text;
        ex.emotion = data.records[size_t(i)].emotion;
        ex.chosen = render_toy_image(ex.emotion, rng, mc.image_size);
        ex.rejected = render_toy_image((ex.emotion + 3) % 8, rng, mc.image_size);
        pairs.push_back(std::move(ex));
    }

    double worst = 0.0;
    for (const bool emotion_term : {false, true}) {
        PromptBank bank = bank0;
        Rng batch_rng(hash_combine(common.seed, emotion_term ? 6 : 5));
        PreferenceBatch batch =
            assemble_batch(pairs, {0, 1}, bank, text_enc, sched, mc.cond_tokens, batch_rng);
        const GradCheckResult res = grad_check(theta, ref, bank, batch, tcfg, emotion_term, 200,
                                               1e-5, hash_combine(common.seed, 7));
        std::cout << (emotion_term ? "emotion preference loss" : "preference loss")
                  << ": max relative error " << format_double(res.max_rel_error) << " over "
                  << res.n_checked << " parameters\n";
        worst = std::max(worst, res.max_rel_error);
    }
    return worst < 1e-4 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emotion-conditioned toy diffusion workbench"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--config", common.config_path, "JSON config file")->capture_default_str();
    app.add_option("--seed", common.seed, "global seed")->capture_default_str();

    // make-toy-data
    auto* make_data = app.add_subcommand("make-toy-data", "generate the toy emotion dataset");
    std::string md_out = "toy_data";
    int md_n = 24;
    make_data->add_option("--out", md_out, "output directory");
    make_data->add_option("--n", md_n, "records per emotion");

    // bank build | inspect
    auto* bank_cmd = app.add_subcommand("bank", "prompt bank operations");
    bank_cmd->require_subcommand(1);
    auto* bank_build_cmd = bank_cmd->add_subcommand("build", "cluster records into a bank");
    std::string bb_data, bb_out = "bank.edbk";
    std::optional<int> bb_clusters;
    bank_build_cmd->add_option("--data", bb_data, "fixture records file")->required();
    bank_build_cmd->add_option("--out", bb_out, "bank output path");
    bank_build_cmd->add_option("--clusters", bb_clusters, "clusters per emotion (L)");
    auto* bank_inspect_cmd = bank_cmd->add_subcommand("inspect", "print bank header info");
    std::string bi_bank;
    bank_inspect_cmd->add_option("--bank", bi_bank, "bank file")->required();

    // pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "reference denoiser pretraining");
    std::string pt_data, pt_images, pt_out = "ref.edck", pt_metrics;
    std::optional<int> pt_steps;
    std::optional<double> pt_lr;
    pretrain_cmd->add_option("--data", pt_data, "fixture records file")->required();
    pretrain_cmd->add_option("--images", pt_images, "image directory")->required();
    pretrain_cmd->add_option("--out", pt_out, "checkpoint output");
    pretrain_cmd->add_option("--steps", pt_steps, "training steps");
    pretrain_cmd->add_option("--lr", pt_lr, "learning rate");
    pretrain_cmd->add_option("--metrics", pt_metrics, "metrics log output");

    // make-pairs
    auto* pairs_cmd = app.add_subcommand("make-pairs", "build scored preference pairs");
    std::string mp_data, mp_out_dir = "pairs_images", mp_pairs = "pairs.tsv";
    int mp_prompts = 8, mp_per_band = 3;
    pairs_cmd->add_option("--data", mp_data, "fixture records file")->required();
    pairs_cmd->add_option("--out-dir", mp_out_dir, "candidate image directory");
    pairs_cmd->add_option("--pairs", mp_pairs, "preference file output");
    pairs_cmd->add_option("--n-prompts", mp_prompts, "distinct prompts to use");
    pairs_cmd->add_option("--per-band", mp_per_band, "on/off-band candidates per group");

    // train-dpo
    auto* train_cmd = app.add_subcommand("train-dpo", "preference-train the denoiser");
    std::string td_ref, td_pairs, td_bank, td_out = "theta.edck", td_bank_out = "bank_trained.edbk",
                td_metrics = "metrics.tsv";
    std::optional<int> td_steps;
    std::optional<double> td_lr, td_beta;
    train_cmd->add_option("--ref", td_ref, "reference checkpoint")->required();
    train_cmd->add_option("--pairs", td_pairs, "preference file")->required();
    train_cmd->add_option("--bank", td_bank, "bank file")->required();
    train_cmd->add_option("--out", td_out, "trained checkpoint output");
    train_cmd->add_option("--bank-out", td_bank_out, "trained bank output");
    train_cmd->add_option("--metrics", td_metrics, "metrics log output");
    train_cmd->add_option("--steps", td_steps, "training steps");
    train_cmd->add_option("--lr", td_lr, "learning rate");
    train_cmd->add_option("--beta", td_beta, "preference coefficient");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "generate one image");
    std::string s_model, s_bank, s_prompt, s_emotion, s_out = "out.ppm", s_prov;
    bool s_no_rewriter = false, s_no_visual = false;
    sample_cmd->add_option("--model", s_model, "checkpoint")->required();
    sample_cmd->add_option("--bank", s_bank, "bank file")->required();
    sample_cmd->add_option("--prompt", s_prompt, "text prompt")->required();
    sample_cmd->add_option("--emotion", s_emotion, "emotion name or id")->required();
    sample_cmd->add_option("--out", s_out, "output ppm");
    sample_cmd->add_option("--provenance", s_prov, "provenance output path");
    sample_cmd->add_flag("--no-rewriter", s_no_rewriter, "skip prompt rewriting");
    sample_cmd->add_flag("--no-visual", s_no_visual, "skip the visual prompt");

    // rewrite
    auto* rewrite_cmd = app.add_subcommand("rewrite", "run the rewriting workflow");
    std::string r_prompt, r_emotion, r_script, r_transcript;
    rewrite_cmd->add_option("--prompt", r_prompt, "source prompt")->required();
    rewrite_cmd->add_option("--emotion", r_emotion, "emotion name or id")->required();
    rewrite_cmd->add_option("--script", r_script, "scripted backend responses file");
    rewrite_cmd->add_option("--transcript", r_transcript, "session transcript output");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate configurations");
    std::string e_model, e_bank, e_out = "eval.tsv", e_configs = "full,ablation";
    int e_n = 10;
    eval_cmd->add_option("--model", e_model, "checkpoint")->required();
    eval_cmd->add_option("--bank", e_bank, "bank file")->required();
    eval_cmd->add_option("--n", e_n, "prompts (x8 emotions)");
    eval_cmd->add_option("--configs", e_configs, "comma list: full,ablation,no-rewriter,no-visual");
    eval_cmd->add_option("--out", e_out, "summary output");

    // gradcheck
    auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (make_data->parsed()) return cmd_make_toy_data(common, md_out, md_n);
        if (bank_build_cmd->parsed()) return cmd_bank_build(common, bb_data, bb_out, bb_clusters);
        if (bank_inspect_cmd->parsed()) return cmd_bank_inspect(bi_bank);
        if (pretrain_cmd->parsed())
            return cmd_pretrain(common, pt_data, pt_images, pt_out, pt_steps, pt_lr, pt_metrics);
        if (pairs_cmd->parsed())
            return cmd_make_pairs(common, mp_data, mp_out_dir, mp_pairs, mp_prompts, mp_per_band);
        if (train_cmd->parsed())
            return cmd_train_dpo(common, td_ref, td_pairs, td_bank, td_out, td_bank_out,
                                 td_metrics, td_steps, td_lr, td_beta);
        if (sample_cmd->parsed())
            return cmd_sample(common, s_model, s_bank, s_prompt, s_emotion, s_out, s_no_rewriter,
                              s_no_visual, s_prov);
        if (rewrite_cmd->parsed())
            return cmd_rewrite(common, r_prompt, r_emotion, r_script, r_transcript);
        if (eval_cmd->parsed()) return cmd_eval(common, e_model, e_bank, e_n, e_configs, e_out);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
