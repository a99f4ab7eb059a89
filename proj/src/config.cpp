#include "emodir/config.hpp"

#include <fstream>

#include <json.hpp>

#include "emodir/rng.hpp"

namespace emodir {

ModelConfig Config::model_config() const {
    ModelConfig m;
    m.image_size = image_size;
    m.patch = patch;
    m.d_hidden = d_hidden;
    m.d_ff = d_ff;
    m.n_blocks = n_blocks;
    m.lora_rank = lora_rank;
    m.d_text = d_text;
    m.d_visual = d_visual;
    m.cond_tokens = cond_tokens;
    m.validate();
    return m;
}

TrainerConfig Config::trainer_config(uint64_t seed) const {
    TrainerConfig t;
    t.beta = dpo_beta;
    t.omega = omega;
    t.learning_rate = learning_rate;
    t.warmup_fraction = warmup_fraction;
    t.batch_size = batch_size;
    t.ref_batch_size = ref_batch_size;
    t.steps = steps;
    t.timesteps = timesteps;
    t.beta_start = beta_start;
    t.beta_end = beta_end;
    t.seed = seed;
    t.validate();
    return t;
}

CheckThresholds Config::thresholds() const {
    return {semantic_min, emotion_min, abstractness_max, visual_min, max_tokens};
}

DefaultScorerConfig Config::scorer_config() const {
    DefaultScorerConfig s;
    s.probes = probes;
    s.probe_steps = probe_steps;
    return s;
}

namespace {

// field table keeps load/dump/hash in one place
template <class F>
void for_each_field(Config& c, F&& fn) {
    fn("d_text", c.d_text);
    fn("d_visual", c.d_visual);
    fn("text_seed", c.text_seed);
    fn("visual_seed", c.visual_seed);
    fn("xmodal_seed", c.xmodal_seed);
    fn("bank_clusters", c.bank_clusters);
    fn("cond_tokens", c.cond_tokens);
    fn("image_size", c.image_size);
    fn("patch", c.patch);
    fn("d_hidden", c.d_hidden);
    fn("d_ff", c.d_ff);
    fn("n_blocks", c.n_blocks);
    fn("lora_rank", c.lora_rank);
    fn("timesteps", c.timesteps);
    fn("beta_start", c.beta_start);
    fn("beta_end", c.beta_end);
    fn("dpo_beta", c.dpo_beta);
    fn("omega", c.omega);
    fn("learning_rate", c.learning_rate);
    fn("warmup_fraction", c.warmup_fraction);
    fn("batch_size", c.batch_size);
    fn("ref_batch_size", c.ref_batch_size);
    fn("steps", c.steps);
    fn("semantic_min", c.semantic_min);
    fn("emotion_min", c.emotion_min);
    fn("abstractness_max", c.abstractness_max);
    fn("visual_min", c.visual_min);
    fn("max_tokens", c.max_tokens);
    fn("probes", c.probes);
    fn("probe_steps", c.probe_steps);
    fn("lexicon_dir", c.lexicon_dir);
    fn("abstract_words_path", c.abstract_words_path);
}

}  // namespace

void Config::apply_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw ParseError("config " + path + ": top level must be an object");

    std::set<std::string> known;
    for_each_field(*this, [&known](const char* key, auto&) { known.insert(key); });
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!known.count(key)) throw ParseError("config " + path + ": unknown key '" + key + "'");
    }
    for_each_field(*this, [&j, &path](const char* key, auto& field) {
        if (!j.contains(key)) return;
        try {
            field = j.at(key).get<std::decay_t<decltype(field)>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("config " + path + ": bad value for '" + std::string(key) +
                             "': " + e.what());
        }
    });
}

std::string Config::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for_each_field(const_cast<Config&>(*this),
                   [&j](const char* key, auto& field) { j[key] = field; });
    return j.dump(2);  // nlohmann orders keys, so this is canonical
}

uint64_t Config::hash() const {
    const std::string s = to_json();
    return hash_bytes(s.data(), s.size(), 0xc0f16ULL);
}

}  // namespace emodir
