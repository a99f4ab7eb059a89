#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "emodir/denoiser.hpp"
#include "emodir/embeddings.hpp"
#include "emodir/schedule.hpp"

#include "test_util.hpp"

using namespace emodir;
using emodir::testutil::TempDir;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch = 4;
    cfg.d_hidden = 16;
    cfg.d_ff = 32;
    cfg.n_blocks = 2;
    cfg.lora_rank = 2;
    cfg.d_text = 12;
    cfg.d_visual = 10;
    cfg.cond_tokens = 3;
    return cfg;
}

Condition random_condition(const ModelConfig& cfg, uint64_t seed, bool zero_visual = false) {
    Rng rng(seed);
    Condition cond;
    cond.text_tokens = Matrix(cfg.cond_tokens, cfg.d_text);
    for (double& x : cond.text_tokens.v) x = rng.normal();
    cond.visual = VisualPrompt::zeros(cfg.cond_tokens, cfg.d_visual, 0);
    if (!zero_visual)
        for (double& x : cond.visual.tokens.v) x = rng.normal();
    return cond;
}

Image random_image(int size, uint64_t seed) {
    Rng rng(seed);
    Image img(size, size);
    for (double& v : img.rgb) v = rng.normal();
    return img;
}

void randomize_lora_inputs(DenoiserModel& m, uint64_t seed, double scale = 0.2) {
    Rng rng(seed);
    for (auto& blk : m.blocks)
        for (Matrix* b : {&blk.cross.bq, &blk.cross.bk, &blk.cross.bv})
            for (double& x : b->v) x = rng.normal() * scale;
}

}  // namespace

TEST_CASE("schedule: single step") {
    const NoiseSchedule s = make_schedule(1, 0.5, 0.5);
    REQUIRE(s.alpha_bar.size() == 1);
    CHECK(s.alpha_bar[0] == 0.5);
}

TEST_CASE("schedule: monotone and in range") {
    const NoiseSchedule s = make_schedule(100, 1e-4, 0.02);
    for (int t = 0; t < 100; ++t) {
        CHECK(s.alpha_bar[size_t(t)] > 0.0);
        CHECK(s.alpha_bar[size_t(t)] < 1.0);
        if (t > 0) CHECK(s.alpha_bar[size_t(t)] < s.alpha_bar[size_t(t - 1)]);
    }
}

TEST_CASE("schedule: cumulative product matches an independent script") {
    const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
    long double prod = 1.0L;
    for (int t = 0; t < 1000; ++t) {
        const long double beta = 1e-4L + (0.02L - 1e-4L) * (long double)(t) / 999.0L;
        prod *= 1.0L - beta;
    }
    CHECK(std::fabs(double(prod) - s.alpha_bar.back()) < 1e-12);
}

TEST_CASE("schedule: defaults keep the endpoints useful") {
    const NoiseSchedule s = make_schedule(100, 1e-4, 0.06);
    CHECK(s.alpha_bar.front() > 0.99);
    CHECK(s.alpha_bar.back() < 0.05);
}

TEST_CASE("schedule: signal/noise weights are complementary") {
    const NoiseSchedule s = make_schedule(250, 1e-4, 0.05);
    for (int t = 1; t <= 250; ++t) {
        const double a = std::sqrt(s.alpha_bar_at(t));
        const double b = std::sqrt(1.0 - s.alpha_bar_at(t));
        CHECK(std::fabs(a * a + b * b - 1.0) < 1e-12);
    }
}

TEST_CASE("schedule: invalid parameters") {
    CHECK_THROWS_AS(make_schedule(0, 0.1, 0.2), InvalidInput);
    CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), InvalidInput);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), InvalidInput);
    CHECK_THROWS_AS(make_schedule(10, 0.3, 1.0), InvalidInput);
}

TEST_CASE("forward_diffuse: limits and shape checks") {
    const Image x0 = random_image(8, 1);
    const Image eps = random_image(8, 2);

    NoiseSchedule pure_signal{1, {0.0}, {1.0}};
    CHECK(forward_diffuse(x0, 1, eps, pure_signal).rgb == x0.rgb);

    NoiseSchedule pure_noise{1, {1.0}, {0.0}};
    CHECK(forward_diffuse(x0, 1, eps, pure_noise).rgb == eps.rgb);

    const NoiseSchedule s = make_schedule(10, 1e-3, 0.3);
    CHECK_THROWS_AS(forward_diffuse(x0, 11, eps, s), InvalidInput);
    CHECK_THROWS_AS(forward_diffuse(x0, 1, random_image(4, 3), s), InvalidInput);
}

TEST_CASE("forward_diffuse: variance matches the mixing weights") {
    const NoiseSchedule s = make_schedule(100, 1e-4, 0.06);
    const int t = 50;
    Rng rng(55);
    double sum = 0.0, sum_sq = 0.0;
    int n = 0;
    for (int rep = 0; rep < 40; ++rep) {
        Image x0(16, 16), eps(16, 16);
        for (double& v : x0.rgb) v = rng.normal();
        for (double& v : eps.rgb) v = rng.normal();
        const Image xt = forward_diffuse(x0, t, eps, s);
        for (double v : xt.rgb) {
            sum += v;
            sum_sq += v * v;
            ++n;
        }
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    const double expected = s.alpha_bar_at(t) * 1.0 + (1.0 - s.alpha_bar_at(t));
    CHECK(std::fabs(var - expected) / expected < 0.05);
}

namespace {

DualAttentionWeights random_dual_weights(const ModelConfig& cfg, uint64_t seed,
                                         bool zero_b = true) {
    DenoiserModel m = DenoiserModel::init(cfg, seed);
    DualAttentionWeights w = m.blocks[0].cross;
    if (!zero_b) {
        Rng rng(hash_combine(seed, 1));
        for (Matrix* b : {&w.bq, &w.bk, &w.bv})
            for (double& x : b->v) x = rng.normal() * 0.3;
    }
    return w;
}

}  // namespace

TEST_CASE("dual attention: zero low-rank inputs reproduce the text branch exactly") {
    const ModelConfig cfg = tiny_config();
    const DualAttentionWeights w = random_dual_weights(cfg, 2);  // B zero from init
    const Condition cond = random_condition(cfg, 3);
    Matrix x(5, cfg.d_hidden);
    Rng rng(4);
    for (double& v : x.v) v = rng.normal();

    const Matrix full = dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, w);

    const Matrix h_text = matmul_nt(cond.text_tokens, w.text_in);
    const Matrix expected = attention(matmul_nt(x, w.wq), matmul_nt(h_text, w.wk),
                                      matmul_nt(h_text, w.wv));
    CHECK(full.v == expected.v);
}

TEST_CASE("dual attention: simultaneous key/value permutation is invisible") {
    const ModelConfig cfg = tiny_config();
    const DualAttentionWeights w = random_dual_weights(cfg, 5, /*zero_b=*/false);
    Condition cond = random_condition(cfg, 6);
    Matrix x(4, cfg.d_hidden);
    Rng rng(7);
    for (double& v : x.v) v = rng.normal();

    const Matrix base = dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, w);

    // rotate text token rows (keys and values move together)
    Matrix permuted(cond.text_tokens.rows, cond.text_tokens.cols);
    for (int i = 0; i < cond.text_tokens.rows; ++i)
        std::copy(cond.text_tokens.row((i + 1) % cond.text_tokens.rows),
                  cond.text_tokens.row((i + 1) % cond.text_tokens.rows) + cond.text_tokens.cols,
                  permuted.row(i));
    const Matrix after = dual_cross_attention_fw(x, permuted, cond.visual.tokens, w);
    for (size_t i = 0; i < base.v.size(); ++i) CHECK(base.v[i] == doctest::Approx(after.v[i]).epsilon(1e-12));
}

TEST_CASE("dual attention: single-token hand computation") {
    ModelConfig cfg = tiny_config();
    cfg.d_hidden = 2;  // rms_norm not involved; widths can be tiny
    DualAttentionWeights w;
    w.wq = w.wk = w.wv = Matrix(1, 1);
    w.wq(0, 0) = w.wk(0, 0) = w.wv(0, 0) = 1.0;
    w.aq = w.ak = w.av = Matrix(1, 1);
    w.bq = w.bk = w.bv = Matrix(1, 1);  // zero: visual branch silent
    w.text_in = Matrix(1, 1);
    w.text_in(0, 0) = 1.0;
    w.visual_in = Matrix(1, 1);

    Matrix x(1, 1);
    x(0, 0) = 2.0;
    Matrix text(1, 1);
    text(0, 0) = 3.0;
    Matrix visual(1, 1);

    const Matrix out = dual_cross_attention_fw(x, text, visual, w);
    CHECK(out(0, 0) == 3.0);  // single-key softmax weight is exactly 1
}

TEST_CASE("dual attention: output is the sum of the two branches") {
    const ModelConfig cfg = tiny_config();
    const DualAttentionWeights w = random_dual_weights(cfg, 8, /*zero_b=*/false);
    const Condition cond = random_condition(cfg, 9);
    Matrix x(6, cfg.d_hidden);
    Rng rng(10);
    for (double& v : x.v) v = rng.normal();

    const Matrix full = dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, w);

    DualAttentionWeights text_only = w;
    text_only.bq.zero();
    text_only.bk.zero();
    text_only.bv.zero();
    const Matrix text_branch =
        dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, text_only);

    // visual branch computed by hand
    const Matrix h_visual = matmul_nt(cond.visual.tokens, w.visual_in);
    const Matrix q_v = matmul_nt(matmul_nt(x, w.bq), w.aq);
    const Matrix k_v = matmul_nt(matmul_nt(h_visual, w.bk), w.ak);
    const Matrix v_v = matmul_nt(matmul_nt(h_visual, w.bv), w.av);
    const Matrix visual_branch = attention(q_v, k_v, v_v);

    for (size_t i = 0; i < full.v.size(); ++i)
        CHECK(full.v[i] - text_branch.v[i] ==
              doctest::Approx(visual_branch.v[i]).epsilon(1e-12));
}

TEST_CASE("dual attention: analytic gradient of the query adapter matches finite differences") {
    const ModelConfig cfg = tiny_config();
    DualAttentionWeights w = random_dual_weights(cfg, 12, /*zero_b=*/false);
    const Condition cond = random_condition(cfg, 13);
    Matrix x(4, cfg.d_hidden);
    Rng rng(14);
    for (double& v : x.v) v = rng.normal();

    auto mean_output = [&] {
        const Matrix out = dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, w);
        double s = 0.0;
        for (double v : out.v) s += v;
        return s / double(out.v.size());
    };

    DualAttnCache cache;
    const Matrix out = dual_cross_attention_fw(x, cond.text_tokens, cond.visual.tokens, w, &cache);
    Matrix d_out(out.rows, out.cols);
    d_out.fill(1.0 / double(out.v.size()));
    DualAttentionWeights grads = random_dual_weights(cfg, 0);
    grads.for_each([](const char*, Matrix& m) { m.zero(); });
    dual_cross_attention_bw(cache, w, d_out, grads, nullptr, nullptr, nullptr);

    const double fd_eps = 1e-6;
    Rng pick(15);
    for (int s = 0; s < 12; ++s) {
        const size_t i = size_t(pick.below(w.aq.size()));
        const double saved = w.aq.v[i];
        w.aq.v[i] = saved + fd_eps;
        const double up = mean_output();
        w.aq.v[i] = saved - fd_eps;
        const double down = mean_output();
        w.aq.v[i] = saved;
        const double fd = (up - down) / (2.0 * fd_eps);
        const double rel = std::fabs(grads.aq.v[i] - fd) / std::max(std::fabs(fd), 1e-8);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("predict_noise: deterministic, shape-preserving, validated") {
    ModelConfig cfg;  // full 16x16 default
    const DenoiserModel m = DenoiserModel::init(cfg, 21);
    const Condition cond = random_condition(cfg, 22);
    const Image x_t = random_image(cfg.image_size, 23);

    const Image a = predict_noise(m, x_t, 7, cond);
    const Image b = predict_noise(m, x_t, 7, cond);
    CHECK(a.rgb == b.rgb);
    CHECK(a.width == 16);
    CHECK(a.height == 16);
    CHECK(a.rgb.size() == x_t.rgb.size());

    CHECK_THROWS_AS(predict_noise(m, x_t, 7, Condition{}), InvalidInput);
    Condition bad = cond;
    bad.text_tokens = Matrix(cfg.cond_tokens + 1, cfg.d_text);
    CHECK_THROWS_AS(predict_noise(m, x_t, 7, bad), InvalidInput);
}

TEST_CASE("predict_noise: visual tokens matter exactly when the low-rank inputs are non-zero") {
    const ModelConfig cfg = tiny_config();
    DenoiserModel m = DenoiserModel::init(cfg, 31);
    const Image x_t = random_image(cfg.image_size, 32);
    Condition cond = random_condition(cfg, 33);
    Condition perturbed = cond;
    perturbed.visual.tokens(1, 3) += 0.5;

    // B == 0 from init: the perturbation is invisible
    CHECK(predict_noise(m, x_t, 2, cond).rgb == predict_noise(m, x_t, 2, perturbed).rgb);

    randomize_lora_inputs(m, 34);
    CHECK(predict_noise(m, x_t, 2, cond).rgb != predict_noise(m, x_t, 2, perturbed).rgb);
}

TEST_CASE("sample: determinism, clamping, centered output") {
    const ModelConfig cfg = tiny_config();
    const DenoiserModel m = DenoiserModel::init(cfg, 41);
    const Condition cond = random_condition(cfg, 42);
    const NoiseSchedule sched = make_schedule(20, 1e-4, 0.08);

    const Image a = sample(m, cond, sched, 77);
    const Image b = sample(m, cond, sched, 77);
    CHECK(a.rgb == b.rgb);
    CHECK(a.rgb != sample(m, cond, sched, 78).rgb);

    double sum = 0.0, sum_sq = 0.0;
    int n = 0;
    for (int s = 0; s < 8; ++s) {
        const Image img = sample(m, cond, sched, 100 + uint64_t(s));
        for (double v : img.rgb) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
            sum += v;
            sum_sq += v * v;
            ++n;
        }
    }
    REQUIRE(n >= 1000);
    const double mean = sum / n;
    const double sd = std::sqrt(sum_sq / n - mean * mean);
    CHECK(std::fabs(mean) <= 3.0 * sd / std::sqrt(double(n)));
}

TEST_CASE("checkpoint round trip") {
    TempDir tmp("ckpt");
    ModelConfig cfg = tiny_config();
    DenoiserModel m = DenoiserModel::init(cfg, 51);
    randomize_lora_inputs(m, 52);

    save_checkpoint(tmp.file("a.edck"), m);
    DenoiserModel loaded = load_checkpoint(tmp.file("a.edck"));
    CHECK(loaded.cfg == cfg);
    save_checkpoint(tmp.file("b.edck"), loaded);
    CHECK(testutil::read_file_bytes(tmp.file("a.edck")) ==
          testutil::read_file_bytes(tmp.file("b.edck")));

    // f32-valued parameters survive exactly in memory
    m.visit([](const std::string&, ParamRole, Matrix& w) {
        for (double& x : w.v) x = double(float(x));
    });
    save_checkpoint(tmp.file("c.edck"), m);
    DenoiserModel again = load_checkpoint(tmp.file("c.edck"));
    bool all_equal = true;
    again.visit([&](const std::string& name, ParamRole, Matrix& w) {
        m.visit([&](const std::string& n2, ParamRole, Matrix& w2) {
            if (n2 == name && w.v != w2.v) all_equal = false;
        });
    });
    CHECK(all_equal);

    std::ofstream(tmp.file("junk.edck"), std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(load_checkpoint(tmp.file("junk.edck")), ParseError);
}
