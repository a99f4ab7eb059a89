#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emodir/dataset.hpp"
#include "emodir/dpo.hpp"

#include "test_util.hpp"

using namespace emodir;
using emodir::testutil::TempDir;

namespace {

// independent scalar reference: -log sigmoid(-x), evaluated in long double
double softplus_oracle(double x) {
    const long double lx = x;
    if (lx > 0.0L) return double(lx + std::log1p((double)std::exp(-lx)));
    return double(std::log1p((double)std::exp(lx)));
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch = 4;
    cfg.d_hidden = 16;
    cfg.d_ff = 32;
    cfg.n_blocks = 1;
    cfg.lora_rank = 2;
    cfg.d_text = 12;
    cfg.d_visual = 10;
    cfg.cond_tokens = 3;
    return cfg;
}

struct Fixture {
    ModelConfig cfg = tiny_config();
    StubTextEncoder text_enc{12, 1};
    StubVisualEncoder visual_enc{10, 2};
    EmotionModel model = EmotionModel::mikels8();
    PromptBank bank;
    std::vector<PreferenceExample> pairs;
    NoiseSchedule sched = make_schedule(10, 1e-3, 0.2);

    explicit Fixture(uint64_t seed) {
        std::vector<EmbeddingRecord> records;
        Rng rng(seed);
        for (int e = 0; e < 8; ++e)
            for (int i = 0; i < 3; ++i) {
                EmbeddingRecord rec;
                rec.id = std::to_string(e) + "_" + std::to_string(i);
                rec.emotion = e;
                rec.text = "probe " + std::to_string(e) + " " + std::to_string(i);
                rec.text_embedding = text_enc.encode(rec.text);
                rec.visual_embedding = visual_enc.encode(render_toy_image(e, rng, cfg.image_size));
                records.push_back(std::move(rec));
            }
        bank = build_bank(records, model, cfg.cond_tokens, seed);
        for (int i = 0; i < 4; ++i) {
            PreferenceExample ex;
            ex.emotion = int(rng.below(8));
            ex.prompt = "pair prompt " + std::to_string(i);
            ex.chosen = render_toy_image(ex.emotion, rng, cfg.image_size);
            ex.rejected = render_toy_image((ex.emotion + 1) % 8, rng, cfg.image_size);
            pairs.push_back(std::move(ex));
        }
    }

    PreferenceBatch batch(uint64_t seed, int n = 2) {
        Rng rng(seed);
        std::vector<int> picks;
        for (int i = 0; i < n; ++i) picks.push_back(int(rng.below(pairs.size())));
        return assemble_batch(pairs, picks, bank, text_enc, sched, cfg.cond_tokens, rng);
    }

    TrainerConfig trainer(double beta = 0.05) const {
        TrainerConfig t;
        t.beta = beta;
        t.timesteps = sched.steps;
        t.steps = 0;
        t.batch_size = 2;
        return t;
    }
};

}  // namespace

TEST_CASE("scalar loss cores match an independent evaluation") {
    // chosen residual shrinks vs ref, rejected grows: d_c = 0.01, d_r = -0.09
    const double d_c = (0.1 - 0.2) * (0.1 - 0.2) - (0.1 - 0.1) * (0.1 - 0.1);
    const double d_r = (0.0 - 0.0) * (0.0 - 0.0) - (0.0 - 0.3) * (0.0 - 0.3);
    CHECK(d_c == doctest::Approx(0.01));
    CHECK(d_r == doctest::Approx(-0.09));
    const double loss = preference_pair_loss(d_c, d_r, 1.0);
    CHECK(loss == doctest::Approx(0.744397).epsilon(1e-6));
    CHECK(loss == doctest::Approx(softplus_oracle(0.1)).epsilon(1e-12));

    // penalty with eps_n = 0.1 and a wrong-prompt prediction of 0.4
    const double delta = (0.1 - 0.2) * (0.1 - 0.2) - (0.1 - 0.4) * (0.1 - 0.4);
    CHECK(delta == doctest::Approx(-0.08));
    const double penalty = negative_penalty(delta, 1.0);
    CHECK(penalty == doctest::Approx(0.654355).epsilon(1e-6));
    CHECK(loss + penalty == doctest::Approx(1.398752).epsilon(1e-6));
}

TEST_CASE("penalty strictly decreases as the negative residual grows") {
    double prev = negative_penalty(0.5, 2.0);
    for (double grow = 0.1; grow < 2.0; grow += 0.3) {
        const double cur = negative_penalty(0.5 - grow, 2.0);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("identical models give exactly log 2") {
    Fixture fx(100);
    const DenoiserModel theta = DenoiserModel::init(fx.cfg, 7);
    const DenoiserModel ref = theta;
    const double log2 = std::log(2.0);
    for (int trial = 0; trial < 10; ++trial) {
        PreferenceBatch batch = fx.batch(200 + uint64_t(trial));
        const LossResult res = dpo_loss(theta, ref, batch, fx.trainer());
        CHECK(std::fabs(res.loss - log2) < 1e-9);
        CHECK(res.mean_margin == 0.0);
    }
}

TEST_CASE("vanishing preference coefficient drives the loss to log 2") {
    Fixture fx(101);
    const DenoiserModel theta = DenoiserModel::init(fx.cfg, 8);
    const DenoiserModel ref = DenoiserModel::init(fx.cfg, 9);  // different weights
    PreferenceBatch batch = fx.batch(300);
    const LossResult res = dpo_loss(theta, ref, batch, fx.trainer(1e-12));
    CHECK(std::fabs(res.loss - std::log(2.0)) < 1e-6);
}

TEST_CASE("emotion loss with the zero-delta construction is exactly 2 log 2") {
    Fixture fx(102);
    const DenoiserModel theta = DenoiserModel::init(fx.cfg, 10);
    const DenoiserModel ref = theta;
    PreferenceBatch batch = fx.batch(400);
    for (auto& item : batch.items) item.cond_neg = item.cond;  // c_n == c, eps_n == eps_c
    const LossResult res = emotion_dpo_loss(theta, ref, batch, fx.trainer());
    CHECK(std::fabs(res.loss - 2.0 * std::log(2.0)) < 1e-9);
}

TEST_CASE("the penalty term is always positive") {
    Fixture fx(103);
    const DenoiserModel theta = DenoiserModel::init(fx.cfg, 11);
    const DenoiserModel ref = DenoiserModel::init(fx.cfg, 12);
    for (int trial = 0; trial < 5; ++trial) {
        PreferenceBatch batch = fx.batch(500 + uint64_t(trial));
        const LossResult plain = dpo_loss(theta, ref, batch, fx.trainer());
        const LossResult emo = emotion_dpo_loss(theta, ref, batch, fx.trainer());
        CHECK(emo.loss > plain.loss);
        CHECK(emo.penalty_term > 0.0);
        CHECK(emo.dpo_term == doctest::Approx(plain.loss).epsilon(1e-12));
    }
}

TEST_CASE("swapping chosen and rejected negates the sigmoid argument") {
    Fixture fx(104);
    const DenoiserModel theta = DenoiserModel::init(fx.cfg, 13);
    const DenoiserModel ref = DenoiserModel::init(fx.cfg, 14);
    const TrainerConfig cfg = fx.trainer();
    PreferenceBatch batch = fx.batch(600, 3);

    // per-item sigmoid arguments computed directly from model evaluations
    std::vector<double> inner;
    for (const auto& item : batch.items) {
        auto sq = [](const Image& a, const Image& b) {
            double s = 0.0;
            for (size_t i = 0; i < a.rgb.size(); ++i)
                s += (a.rgb[i] - b.rgb[i]) * (a.rgb[i] - b.rgb[i]);
            return s;
        };
        const double d_c = sq(item.eps_chosen, predict_noise(theta, item.xt_chosen, item.t, item.cond)) -
                           sq(item.eps_chosen, predict_noise(ref, item.xt_chosen, item.t, item.cond));
        const double d_r =
            sq(item.eps_rejected, predict_noise(theta, item.xt_rejected, item.t, item.cond)) -
            sq(item.eps_rejected, predict_noise(ref, item.xt_rejected, item.t, item.cond));
        inner.push_back(cfg.beta_t_omega() * (d_c - d_r));
    }

    PreferenceBatch swapped = batch;
    for (auto& item : swapped.items) {
        std::swap(item.xt_chosen, item.xt_rejected);
        std::swap(item.eps_chosen, item.eps_rejected);
    }
    const double swapped_loss = dpo_loss(theta, ref, swapped, cfg).loss;
    double expected = 0.0;
    for (double u : inner) expected += softplus_oracle(-u);
    expected /= double(inner.size());
    CHECK(swapped_loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("finite differences are exact on a quadratic probe") {
    // sanity for the checking method itself: f = sum w^2, df/dw = 2w
    Rng rng(71);
    Matrix w(6, 5);
    for (double& x : w.v) x = rng.normal();
    auto f = [&w] {
        double s = 0.0;
        for (double x : w.v) s += x * x;
        return s;
    };
    double max_rel = 0.0;
    const double eps = 1e-5;
    for (size_t i = 0; i < w.v.size(); ++i) {
        const double saved = w.v[i];
        w.v[i] = saved + eps;
        const double up = f();
        w.v[i] = saved - eps;
        const double down = f();
        w.v[i] = saved;
        const double fd = (up - down) / (2.0 * eps);
        max_rel = std::max(max_rel, std::fabs(2.0 * saved - fd) / std::max(std::fabs(fd), 1e-8));
    }
    CHECK(max_rel < 1e-8);
}

TEST_CASE("gradients of both losses pass the finite-difference check") {
    Fixture fx(105);
    DenoiserModel theta = DenoiserModel::init(fx.cfg, 15);
    const DenoiserModel ref = DenoiserModel::init(fx.cfg, 16);
    Rng rng(17);
    for (auto& blk : theta.blocks)
        for (Matrix* b : {&blk.cross.bq, &blk.cross.bk, &blk.cross.bv})
            for (double& x : b->v) x = rng.normal() * 0.1;

    for (const bool emotion_term : {false, true}) {
        PromptBank bank = fx.bank;
        PreferenceBatch batch = fx.batch(emotion_term ? 701 : 700);
        const GradCheckResult res =
            grad_check(theta, ref, bank, batch, fx.trainer(), emotion_term, 60, 1e-5, 42);
        CAPTURE(emotion_term);
        CHECK(res.n_checked >= 60);
        CHECK(res.max_rel_error < 1e-4);
    }
}

TEST_CASE("reference pretraining") {
    ModelConfig cfg = tiny_config();
    StubTextEncoder text_enc(12, 1);

    SUBCASE("zero steps leave the model bitwise unchanged") {
        DenoiserModel m = DenoiserModel::init(cfg, 20);
        const DenoiserModel before = m;
        TrainerConfig t;
        t.steps = 0;
        t.timesteps = 10;
        reference_pretrain(m, {{"still", 0, Image(8, 8, 0.2)}}, t, text_enc);
        bool equal = true;
        m.visit([&](const std::string& name, ParamRole, Matrix& w) {
            before.visit([&](const std::string& n2, ParamRole, const Matrix& w2) {
                if (n2 == name && w.v != w2.v) equal = false;
            });
        });
        CHECK(equal);
    }

    SUBCASE("a single example is overfit") {
        DenoiserModel m = DenoiserModel::init(cfg, 21);
        Rng rng(2);
        TrainerConfig t;
        t.steps = 500;
        t.ref_batch_size = 4;
        t.learning_rate = 2e-3;
        t.timesteps = 10;
        t.seed = 5;
        const auto metrics =
            reference_pretrain(m, {{"a quiet meadow scene", 2, render_toy_image(2, rng, 8)}}, t,
                               text_enc);
        REQUIRE(metrics.size() == 500);
        CHECK(metrics.back().loss < 0.1 * metrics.front().loss);
    }

    SUBCASE("seeded runs are identical") {
        TempDir tmp("pretrain");
        Rng rng(3);
        const Image img = render_toy_image(5, rng, 8);
        TrainerConfig t;
        t.steps = 12;
        t.ref_batch_size = 2;
        t.timesteps = 10;
        t.seed = 9;
        DenoiserModel a = DenoiserModel::init(cfg, 22);
        DenoiserModel b = DenoiserModel::init(cfg, 22);
        reference_pretrain(a, {{"x y", 5, img}}, t, text_enc);
        reference_pretrain(b, {{"x y", 5, img}}, t, text_enc);
        save_checkpoint(tmp.file("a.edck"), a);
        save_checkpoint(tmp.file("b.edck"), b);
        CHECK(testutil::read_file_bytes(tmp.file("a.edck")) ==
              testutil::read_file_bytes(tmp.file("b.edck")));
    }
}

TEST_CASE("preference training respects the trainable split") {
    Fixture fx(106);
    const DenoiserModel ref = DenoiserModel::init(fx.cfg, 30);

    SUBCASE("zero steps change nothing") {
        DenoiserModel theta = ref;
        PromptBank bank = fx.bank;
        TrainerConfig t = fx.trainer();
        t.steps = 0;
        const TrainResult res = train(theta, ref, fx.pairs, bank, t, fx.text_enc);
        CHECK(res.metrics.empty());
        bool equal = true;
        theta.visit([&](const std::string& name, ParamRole, Matrix& w) {
            ref.visit([&](const std::string& n2, ParamRole, const Matrix& w2) {
                if (n2 == name && w.v != w2.v) equal = false;
            });
        });
        CHECK(equal);
    }

    SUBCASE("short run: frozen parts bit-identical, trainable parts move, margins logged") {
        DenoiserModel theta = ref;
        PromptBank bank = fx.bank;
        const PromptBank bank_before = bank;
        TrainerConfig t = fx.trainer(0.01);
        t.steps = 20;
        t.batch_size = 2;
        t.learning_rate = 1e-3;
        t.seed = 77;
        const TrainResult res = train(theta, ref, fx.pairs, bank, t, fx.text_enc);
        REQUIRE(res.metrics.size() == 20);
        for (const auto& m : res.metrics) CHECK(std::isfinite(m.loss));

        bool base_equal = true, lora_b_moved = false;
        theta.visit([&](const std::string& name, ParamRole role, Matrix& w) {
            ref.visit([&](const std::string& n2, ParamRole, const Matrix& w2) {
                if (n2 != name) return;
                if (role == ParamRole::Base && w.v != w2.v) base_equal = false;
                if (role == ParamRole::LoraB && w.v != w2.v) lora_b_moved = true;
            });
        });
        CHECK(base_equal);
        CHECK(lora_b_moved);
        for (int e = 0; e < 8; ++e)
            CHECK(bank.text_centers[size_t(e)].v == bank_before.text_centers[size_t(e)].v);

        // warmup: lr ramps linearly over the first quarter
        CHECK(res.metrics.front().lr < t.learning_rate);
        CHECK(res.metrics.back().lr == doctest::Approx(t.learning_rate));
    }

    SUBCASE("seeded runs produce identical metrics logs") {
        TempDir tmp("train");
        TrainerConfig t = fx.trainer(0.01);
        t.steps = 8;
        t.batch_size = 2;
        t.seed = 123;
        DenoiserModel theta_a = ref, theta_b = ref;
        PromptBank bank_a = fx.bank, bank_b = fx.bank;
        const TrainResult a = train(theta_a, ref, fx.pairs, bank_a, t, fx.text_enc);
        const TrainResult b = train(theta_b, ref, fx.pairs, bank_b, t, fx.text_enc);
        save_metrics(tmp.file("a.tsv"), a.metrics);
        save_metrics(tmp.file("b.tsv"), b.metrics);
        CHECK(testutil::read_file_bytes(tmp.file("a.tsv")) ==
              testutil::read_file_bytes(tmp.file("b.tsv")));
        const auto loaded = load_metrics(tmp.file("a.tsv"));
        REQUIRE(loaded.size() == a.metrics.size());
        for (size_t i = 0; i < loaded.size(); ++i) {
            CHECK(loaded[i].loss == a.metrics[i].loss);
            CHECK(loaded[i].margin == a.metrics[i].margin);
        }
    }
}
