#include "emodir/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "emodir/strutil.hpp"
#include "emodir/threading.hpp"

namespace emodir {

namespace {

double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double squared_error(const Image& a, const Image& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = a.rgb[i] - b.rgb[i];
        s += d * d;
    }
    return s;
}

Image gaussian_field(int w, int h, Rng& rng) {
    Image img(w, h);
    for (double& v : img.rgb) v = rng.normal();
    return img;
}

// d_eps += scale * (pred - target)
Image residual_grad(const Image& pred, const Image& target, double scale) {
    Image g(pred.width, pred.height);
    for (size_t i = 0; i < g.rgb.size(); ++i) g.rgb[i] = scale * (pred.rgb[i] - target.rgb[i]);
    return g;
}

void scatter_token_grads(const VisualPrompt& prompt, const Matrix& d_tokens, BankGrads& bank_grads) {
    if (prompt.source_indices.empty()) return;  // synthetic prompt, no bank storage behind it
    Matrix& dst = bank_grads.visual[size_t(prompt.emotion)];
    for (size_t i = 0; i < prompt.source_indices.size(); ++i) {
        const int row = prompt.source_indices[i];
        for (int c = 0; c < d_tokens.cols; ++c) dst(row, c) += d_tokens(int(i), c);
    }
}

// visit order is fixed, so equal-config models align index for index.
std::vector<Matrix*> collect_params(DenoiserModel& m) {
    std::vector<Matrix*> out;
    m.visit([&out](const std::string&, ParamRole, Matrix& w) { out.push_back(&w); });
    return out;
}

std::vector<ParamRole> collect_roles(const DenoiserModel& m) {
    std::vector<ParamRole> out;
    m.visit([&out](const std::string&, ParamRole role, const Matrix&) { out.push_back(role); });
    return out;
}

}  // namespace

void TrainerConfig::validate() const {
    if (!(beta > 0.0)) throw InvalidInput("TrainerConfig: beta must be > 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
        throw InvalidInput("TrainerConfig: warmup_fraction must be in [0, 1)");
    if (batch_size < 1 || ref_batch_size < 1) throw InvalidInput("TrainerConfig: bad batch size");
    if (steps < 0) throw InvalidInput("TrainerConfig: negative step count");
    if (timesteps < 1) throw InvalidInput("TrainerConfig: timesteps must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidInput("TrainerConfig: bad learning rate");
}

TrainerConfig TrainerConfig::desk_scale() {
    TrainerConfig cfg;
    cfg.beta = 0.002;
    cfg.learning_rate = 2e-3;
    cfg.batch_size = 8;
    cfg.ref_batch_size = 16;
    cfg.steps = 300;
    cfg.timesteps = 100;
    return cfg;
}

double preference_pair_loss(double d_chosen, double d_rejected, double beta_t_omega) {
    return softplus(beta_t_omega * (d_chosen - d_rejected));
}

double negative_penalty(double delta, double beta_t_omega) {
    return softplus(beta_t_omega * delta);
}

PreferenceBatch assemble_batch(const std::vector<PreferenceExample>& pairs,
                               const std::vector<int>& indices, const PromptBank& bank,
                               const TextEncoder& enc, const NoiseSchedule& sched,
                               int cond_tokens, Rng& rng) {
    PreferenceBatch batch;
    batch.items.reserve(indices.size());
    for (int idx : indices) {
        const PreferenceExample& pair = pairs.at(size_t(idx));
        PreferenceBatchItem item;
        item.t = 1 + int(rng.below(uint64_t(sched.steps)));
        item.eps_chosen = gaussian_field(pair.chosen.width, pair.chosen.height, rng);
        item.eps_rejected = gaussian_field(pair.rejected.width, pair.rejected.height, rng);
        item.xt_chosen = forward_diffuse(pair.chosen, item.t, item.eps_chosen, sched);
        item.xt_rejected = forward_diffuse(pair.rejected, item.t, item.eps_rejected, sched);

        const Matrix text_tokens = build_text_tokens(enc, pair.prompt, cond_tokens);
        const std::vector<double> query = enc.encode(pair.prompt);
        item.cond.text_tokens = text_tokens;
        item.cond.visual = retrieve(bank, query, pair.emotion, cond_tokens);
        item.cond.emotion = pair.emotion;
        auto [neg_emotion, neg_prompt] =
            retrieve_negative(bank, query, pair.emotion, cond_tokens, rng);
        item.cond_neg.text_tokens = text_tokens;
        item.cond_neg.visual = std::move(neg_prompt);
        item.cond_neg.emotion = neg_emotion;
        batch.items.push_back(std::move(item));
    }
    return batch;
}

BankGrads BankGrads::zeros(const PromptBank& bank) {
    BankGrads g;
    g.visual.reserve(bank.visual_centers.size());
    for (const auto& m : bank.visual_centers) g.visual.emplace_back(m.rows, m.cols);
    return g;
}

namespace {

struct ItemEval {
    double loss = 0.0;
    double dpo_term = 0.0;
    double penalty_term = 0.0;
    double margin = 0.0;
    bool finite = true;
    DenoiserModel grads;  // per-item buffer, reduced in index order
    BankGrads bank_grads;
};

LossResult eval_batch(const DenoiserModel& theta, const DenoiserModel& ref,
                      const PreferenceBatch& batch, const TrainerConfig& cfg, bool emotion_term,
                      DenoiserModel* grads, BankGrads* bank_grads) {
    if (batch.items.empty()) throw InvalidInput("preference loss: empty batch");
    const double btw = cfg.beta_t_omega();
    const int n = int(batch.items.size());
    const bool want_grads = grads != nullptr;

    std::vector<ItemEval> evals(static_cast<size_t>(n));
    parallel_for(n, [&](int i) {
        const PreferenceBatchItem& item = batch.items[size_t(i)];
        ItemEval& ev = evals[size_t(i)];

        DenoiserCache cache_c, cache_r, cache_n;
        const Image e_tc =
            predict_noise(theta, item.xt_chosen, item.t, item.cond, want_grads ? &cache_c : nullptr);
        const Image e_tr = predict_noise(theta, item.xt_rejected, item.t, item.cond,
                                         want_grads ? &cache_r : nullptr);
        const Image e_rc = predict_noise(ref, item.xt_chosen, item.t, item.cond);
        const Image e_rr = predict_noise(ref, item.xt_rejected, item.t, item.cond);

        const double d_c = squared_error(item.eps_chosen, e_tc) - squared_error(item.eps_chosen, e_rc);
        const double d_r =
            squared_error(item.eps_rejected, e_tr) - squared_error(item.eps_rejected, e_rr);
        const double u1 = btw * (d_c - d_r);
        ev.dpo_term = softplus(u1);
        ev.margin = -(d_c - d_r);
        ev.loss = ev.dpo_term;

        double u2 = 0.0;
        Image e_tn;
        if (emotion_term) {
            // Negative term: same chosen latent and noise, wrong-emotion visual prompt.
            e_tn = predict_noise(theta, item.xt_chosen, item.t, item.cond_neg,
                                 want_grads ? &cache_n : nullptr);
            const double delta =
                squared_error(item.eps_chosen, e_tc) - squared_error(item.eps_chosen, e_tn);
            u2 = btw * delta;
            ev.penalty_term = softplus(u2);
            ev.loss += ev.penalty_term;
        }
        ev.finite = std::isfinite(ev.loss);
        if (!ev.finite || !want_grads) return;

        const double inv_n = 1.0 / double(n);
        const double w1 = sigmoid(u1) * btw * inv_n;
        const double w2 = emotion_term ? sigmoid(u2) * btw * inv_n : 0.0;

        ev.grads = DenoiserModel::zeros(theta.cfg);
        ev.bank_grads.visual.resize(bank_grads ? bank_grads->visual.size() : 0);
        if (bank_grads)
            for (size_t e = 0; e < bank_grads->visual.size(); ++e)
                ev.bank_grads.visual[e] =
                    Matrix(bank_grads->visual[e].rows, bank_grads->visual[e].cols);

        Matrix d_vis_pos(item.cond.visual.tokens.rows, item.cond.visual.tokens.cols);
        Matrix d_vis_neg(item.cond_neg.visual.tokens.rows, item.cond_neg.visual.tokens.cols);

        // d loss / d e_tc = 2(w1 + w2)(e_tc - eps_c)
        predict_noise_backward(theta, cache_c, residual_grad(e_tc, item.eps_chosen, 2.0 * (w1 + w2)),
                               ev.grads, bank_grads ? &d_vis_pos : nullptr);
        // d loss / d e_tr = -2 w1 (e_tr - eps_r)
        predict_noise_backward(theta, cache_r,
                               residual_grad(e_tr, item.eps_rejected, -2.0 * w1), ev.grads,
                               bank_grads ? &d_vis_pos : nullptr);
        if (emotion_term) {
            // d loss / d e_tn = -2 w2 (e_tn - eps_c)
            predict_noise_backward(theta, cache_n, residual_grad(e_tn, item.eps_chosen, -2.0 * w2),
                                   ev.grads, bank_grads ? &d_vis_neg : nullptr);
        }
        if (bank_grads) {
            scatter_token_grads(item.cond.visual, d_vis_pos, ev.bank_grads);
            if (emotion_term) scatter_token_grads(item.cond_neg.visual, d_vis_neg, ev.bank_grads);
        }
    });

    LossResult out;
    for (int i = 0; i < n; ++i) {
        const ItemEval& ev = evals[size_t(i)];
        if (!ev.finite)
            throw NumericError("preference loss: non-finite value at batch item " +
                               std::to_string(i));
        out.loss += ev.loss;
        out.dpo_term += ev.dpo_term;
        out.penalty_term += ev.penalty_term;
        out.mean_margin += ev.margin;
    }
    const double inv_n = 1.0 / double(n);
    out.loss *= inv_n;
    out.dpo_term *= inv_n;
    out.penalty_term *= inv_n;
    out.mean_margin *= inv_n;

    if (want_grads) {
        // Reduce in item order so the result is independent of thread count.
        std::vector<Matrix*> acc = collect_params(*grads);
        for (int i = 0; i < n; ++i) {
            ItemEval& ev = evals[size_t(i)];
            std::vector<Matrix*> src = collect_params(ev.grads);
            for (size_t k = 0; k < acc.size(); ++k) add_inplace(*acc[k], *src[k]);
            if (bank_grads)
                for (size_t e = 0; e < bank_grads->visual.size(); ++e)
                    add_inplace(bank_grads->visual[e], ev.bank_grads.visual[e]);
        }
    }
    return out;
}

}  // namespace

LossResult dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                    const PreferenceBatch& batch, const TrainerConfig& cfg, DenoiserModel* grads,
                    BankGrads* bank_grads) {
    return eval_batch(theta, ref, batch, cfg, false, grads, bank_grads);
}

LossResult emotion_dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                            const PreferenceBatch& batch, const TrainerConfig& cfg,
                            DenoiserModel* grads, BankGrads* bank_grads) {
    return eval_batch(theta, ref, batch, cfg, true, grads, bank_grads);
}

namespace {

struct AdamState {
    Matrix m, v;
};

void adam_update(Matrix& w, const Matrix& g, AdamState& st, double lr, int step_idx) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (st.m.rows == 0) {
        st.m = Matrix(w.rows, w.cols);
        st.v = Matrix(w.rows, w.cols);
    }
    const double c1 = 1.0 - std::pow(b1, double(step_idx));
    const double c2 = 1.0 - std::pow(b2, double(step_idx));
    for (size_t i = 0; i < w.v.size(); ++i) {
        st.m.v[i] = b1 * st.m.v[i] + (1.0 - b1) * g.v[i];
        st.v.v[i] = b2 * st.v.v[i] + (1.0 - b2) * g.v[i] * g.v[i];
        const double mh = st.m.v[i] / c1;
        const double vh = st.v.v[i] / c2;
        w.v[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
}

double warmup_lr(const TrainerConfig& cfg, int step) {
    const int warm = std::max(1, int(std::lround(cfg.warmup_fraction * double(cfg.steps))));
    const double frac = std::min(1.0, double(step + 1) / double(warm));
    return cfg.learning_rate * frac;
}

uint64_t matrix_hash(uint64_t h, const Matrix& w) {
    return hash_combine(h, hash_bytes(w.v.data(), w.v.size() * sizeof(double)));
}

}  // namespace

uint64_t frozen_params_checksum(const DenoiserModel& m, const PromptBank& bank,
                                const TrainableSet& ts) {
    uint64_t h = 0x9d15ULL;
    m.visit([&](const std::string&, ParamRole role, const Matrix& w) {
        const bool trainable = (role == ParamRole::LoraA && ts.lora) ||
                               (role == ParamRole::LoraB && ts.lora) ||
                               (role == ParamRole::VisualIn && ts.visual_in);
        if (!trainable) h = matrix_hash(h, w);
    });
    for (const auto& keys : bank.text_centers) h = matrix_hash(h, keys);
    if (!ts.bank_visual)
        for (const auto& vals : bank.visual_centers) h = matrix_hash(h, vals);
    return h;
}

std::vector<StepMetrics> reference_pretrain(DenoiserModel& model,
                                            const std::vector<PretrainExample>& data,
                                            const TrainerConfig& cfg, const TextEncoder& enc) {
    cfg.validate();
    if (data.empty()) throw InvalidInput("reference_pretrain: empty dataset");
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    // Conditions are text plus an all-zero visual prompt; with zero LoRA-B
    // the visual path carries nothing either way, and stays untrained here.
    std::vector<Condition> conds(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        conds[i].text_tokens = build_text_tokens(enc, data[i].prompt, model.cfg.cond_tokens);
        conds[i].visual =
            VisualPrompt::zeros(model.cfg.cond_tokens, model.cfg.d_visual, data[i].emotion);
        conds[i].emotion = data[i].emotion;
    }

    std::vector<Matrix*> params = collect_params(model);
    const std::vector<ParamRole> roles = collect_roles(model);
    std::vector<AdamState> adam(params.size());

    Rng base(cfg.seed);
    std::vector<StepMetrics> metrics;
    metrics.reserve(size_t(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = base.fork(uint64_t(step));
        const int n = cfg.ref_batch_size;

        struct ItemOut {
            double loss = 0.0;
            DenoiserModel grads;
        };
        std::vector<int> picks(static_cast<size_t>(n));
        std::vector<int> ts(static_cast<size_t>(n));
        std::vector<Image> noises;
        noises.reserve(size_t(n));
        for (int i = 0; i < n; ++i) {
            picks[size_t(i)] = int(rng.below(data.size()));
            ts[size_t(i)] = 1 + int(rng.below(uint64_t(sched.steps)));
            noises.push_back(
                gaussian_field(model.cfg.image_size, model.cfg.image_size, rng));
        }
        std::vector<ItemOut> outs(static_cast<size_t>(n));
        parallel_for(n, [&](int i) {
            const PretrainExample& ex = data[size_t(picks[size_t(i)])];
            const Image xt = forward_diffuse(ex.image, ts[size_t(i)], noises[size_t(i)], sched);
            DenoiserCache cache;
            const Image pred =
                predict_noise(model, xt, ts[size_t(i)], conds[size_t(picks[size_t(i)])], &cache);
            outs[size_t(i)].loss = squared_error(noises[size_t(i)], pred);
            outs[size_t(i)].grads = DenoiserModel::zeros(model.cfg);
            predict_noise_backward(model, cache,
                                   residual_grad(pred, noises[size_t(i)], 2.0 / double(n)),
                                   outs[size_t(i)].grads);
        });

        DenoiserModel grads = DenoiserModel::zeros(model.cfg);
        std::vector<Matrix*> grad_params = collect_params(grads);
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            loss += outs[size_t(i)].loss;
            std::vector<Matrix*> src = collect_params(outs[size_t(i)].grads);
            for (size_t k = 0; k < grad_params.size(); ++k) add_inplace(*grad_params[k], *src[k]);
        }
        loss /= double(n);
        if (!std::isfinite(loss))
            throw TrainingError("reference_pretrain: loss diverged at step " + std::to_string(step));

        const double lr = warmup_lr(cfg, step);
        for (size_t k = 0; k < params.size(); ++k) {
            if (roles[k] == ParamRole::LoraA || roles[k] == ParamRole::LoraB) continue;
            adam_update(*params[k], *grad_params[k], adam[k], lr, step + 1);
        }
        metrics.push_back({step, loss, 0.0, lr});
    }
    return metrics;
}

GradCheckResult grad_check(DenoiserModel& theta, const DenoiserModel& ref, PromptBank& bank,
                           PreferenceBatch& batch, const TrainerConfig& cfg, bool emotion_term,
                           int min_samples, double fd_eps, uint64_t seed) {
    if (!(fd_eps >= 1e-6 && fd_eps <= 1e-4))
        throw InvalidInput("grad_check: fd_eps must be in [1e-6, 1e-4]");

    // Conditions hold copies of bank rows; refresh them whenever the bank
    // storage is perturbed so finite differences see the change.
    auto refresh_tokens = [&] {
        for (auto& item : batch.items) {
            for (Condition* c : {&item.cond, &item.cond_neg}) {
                if (c->visual.source_indices.empty()) continue;
                const Matrix& src = bank.visual_centers[size_t(c->visual.emotion)];
                for (size_t i = 0; i < c->visual.source_indices.size(); ++i)
                    std::memcpy(c->visual.tokens.row(int(i)),
                                src.row(c->visual.source_indices[i]),
                                sizeof(double) * size_t(src.cols));
            }
        }
    };

    DenoiserModel analytic = DenoiserModel::zeros(theta.cfg);
    BankGrads bank_analytic = BankGrads::zeros(bank);
    refresh_tokens();
    eval_batch(theta, ref, batch, cfg, emotion_term, &analytic, &bank_analytic);

    auto loss_value = [&] {
        refresh_tokens();
        return eval_batch(theta, ref, batch, cfg, emotion_term, nullptr, nullptr).loss;
    };

    struct Coord {
        double* value;
        double analytic;
    };
    std::vector<std::pair<Matrix*, Matrix*>> groups;  // {param, analytic grad}
    {
        std::vector<Matrix*> params = collect_params(theta);
        std::vector<Matrix*> grads_v = collect_params(analytic);
        const std::vector<ParamRole> roles = collect_roles(theta);
        for (size_t k = 0; k < params.size(); ++k) {
            const bool trainable = (roles[k] == ParamRole::LoraA && cfg.trainable.lora) ||
                                   (roles[k] == ParamRole::LoraB && cfg.trainable.lora) ||
                                   (roles[k] == ParamRole::VisualIn && cfg.trainable.visual_in);
            if (trainable) groups.emplace_back(params[k], grads_v[k]);
        }
    }
    if (cfg.trainable.bank_visual)
        for (size_t e = 0; e < bank.visual_centers.size(); ++e)
            groups.emplace_back(&bank.visual_centers[e], &bank_analytic.visual[e]);
    if (groups.empty()) throw InvalidInput("grad_check: no trainable parameters");

    const int per_group = std::max(1, (min_samples + int(groups.size()) - 1) / int(groups.size()));
    Rng rng(hash_combine(seed, 0xfdc0ULL));
    std::vector<Coord> coords;
    for (auto& [w, g] : groups)
        for (int s = 0; s < per_group; ++s) {
            const size_t i = size_t(rng.below(w->size()));
            coords.push_back({&w->v[i], g->v[i]});
        }

    GradCheckResult result;
    result.n_checked = int(coords.size());
    for (const Coord& c : coords) {
        const double saved = *c.value;
        *c.value = saved + fd_eps;
        const double up = loss_value();
        *c.value = saved - fd_eps;
        const double down = loss_value();
        *c.value = saved;
        const double fd = (up - down) / (2.0 * fd_eps);
        const double rel = std::fabs(c.analytic - fd) / std::max(std::fabs(fd), 1e-8);
        result.max_rel_error = std::max(result.max_rel_error, rel);
    }
    refresh_tokens();
    return result;
}

TrainResult train(DenoiserModel& theta, const DenoiserModel& ref,
                  const std::vector<PreferenceExample>& pairs, PromptBank& bank,
                  const TrainerConfig& cfg, const TextEncoder& enc) {
    cfg.validate();
    if (pairs.empty() && cfg.steps > 0) throw InvalidInput("train: empty preference dataset");
    const NoiseSchedule sched = make_schedule(cfg.timesteps, cfg.beta_start, cfg.beta_end);

    const uint64_t checksum_before = frozen_params_checksum(theta, bank, cfg.trainable);

    struct Slot {
        Matrix* w;
        Matrix* g;
        AdamState st;
    };
    DenoiserModel grads = DenoiserModel::zeros(theta.cfg);
    BankGrads bank_grads = BankGrads::zeros(bank);
    std::vector<Slot> slots;
    {
        std::vector<Matrix*> params = collect_params(theta);
        std::vector<Matrix*> grads_v = collect_params(grads);
        const std::vector<ParamRole> roles = collect_roles(theta);
        for (size_t k = 0; k < params.size(); ++k) {
            const bool trainable = (roles[k] == ParamRole::LoraA && cfg.trainable.lora) ||
                                   (roles[k] == ParamRole::LoraB && cfg.trainable.lora) ||
                                   (roles[k] == ParamRole::VisualIn && cfg.trainable.visual_in);
            if (trainable) slots.push_back({params[k], grads_v[k], {}});
        }
    }
    if (cfg.trainable.bank_visual)
        for (size_t e = 0; e < bank.visual_centers.size(); ++e)
            slots.push_back({&bank.visual_centers[e], &bank_grads.visual[e], {}});

    Rng base(cfg.seed);
    TrainResult result;
    result.metrics.reserve(size_t(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = base.fork(uint64_t(step));
        std::vector<int> picks(size_t(cfg.batch_size));
        for (int& p : picks) p = int(rng.below(pairs.size()));
        PreferenceBatch batch =
            assemble_batch(pairs, picks, bank, enc, sched, theta.cfg.cond_tokens, rng);

        for (auto& s : slots) s.g->zero();
        const LossResult loss = emotion_dpo_loss(theta, ref, batch, cfg, &grads, &bank_grads);
        if (!std::isfinite(loss.loss))
            throw TrainingError("train: loss diverged at step " + std::to_string(step));

        const double lr = warmup_lr(cfg, step);
        for (auto& s : slots) adam_update(*s.w, *s.g, s.st, lr, step + 1);

        result.metrics.push_back({step, loss.loss, loss.mean_margin, lr});
    }

    const uint64_t checksum_after = frozen_params_checksum(theta, bank, cfg.trainable);
    if (checksum_after != checksum_before)
        throw TrainingError("train: frozen parameters drifted during training");
    result.frozen_checksum = checksum_after;
    return result;
}

void save_metrics(const std::string& path, const std::vector<StepMetrics>& metrics) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    for (const auto& m : metrics)
        f << m.step << "\t" << format_double(m.loss) << "\t" << format_double(m.margin) << "\t"
          << format_double(m.lr) << "\n";
    if (!f) throw IoError("write failed: " + path);
}

std::vector<StepMetrics> load_metrics(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<StepMetrics> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split(line, '\t');
        if (fields.size() != 4)
            throw ParseError("metrics line " + std::to_string(line_no) + ": expected 4 fields");
        out.push_back({int(parse_long(fields[0])), parse_double(fields[1]),
                       parse_double(fields[2]), parse_double(fields[3])});
    }
    return out;
}

}  // namespace emodir
