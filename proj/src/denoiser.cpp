#include "emodir/denoiser.hpp"

#include <cmath>
#include <cstring>

#include "emodir/rng.hpp"
#include "emodir/serialize.hpp"
#include "emodir/strutil.hpp"

namespace emodir {

void ModelConfig::validate() const {
    if (image_size < 4 || image_size > 64) throw InvalidInput("ModelConfig: image_size out of range");
    if (channels != 3) throw InvalidInput("ModelConfig: only 3-channel images supported");
    if (patch < 1 || image_size % patch != 0)
        throw InvalidInput("ModelConfig: patch must divide image_size");
    if (d_hidden < 2 || d_hidden % 2 != 0)
        throw InvalidInput("ModelConfig: d_hidden must be even and >= 2");
    if (d_ff < 1 || n_blocks < 1 || lora_rank < 1 || cond_tokens < 1 || d_text < 1 || d_visual < 1)
        throw InvalidInput("ModelConfig: non-positive dimension");
}

Matrix build_text_tokens(const TextEncoder& enc, const std::string& prompt, int n_tokens) {
    auto words = split_ws(prompt);
    Matrix out(n_tokens, enc.dim());
    const std::vector<double> pad = enc.encode("<|pad|>");
    for (int i = 0; i < n_tokens; ++i) {
        const std::vector<double>& src =
            i < int(words.size()) ? enc.encode(words[size_t(i)]) : pad;
        std::memcpy(out.row(i), src.data(), sizeof(double) * size_t(enc.dim()));
    }
    return out;
}

namespace {

Matrix patchify(const Image& img, const ModelConfig& cfg) {
    const int side = cfg.tokens_per_side();
    Matrix out(cfg.n_tokens(), cfg.patch_dim());
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            double* row = out.row(py * side + px);
            int k = 0;
            for (int y = 0; y < cfg.patch; ++y)
                for (int x = 0; x < cfg.patch; ++x)
                    for (int c = 0; c < 3; ++c)
                        row[k++] = img.at(px * cfg.patch + x, py * cfg.patch + y, c);
        }
    return out;
}

Image unpatchify(const Matrix& tokens, const ModelConfig& cfg) {
    const int side = cfg.tokens_per_side();
    Image out(cfg.image_size, cfg.image_size);
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            const double* row = tokens.row(py * side + px);
            int k = 0;
            for (int y = 0; y < cfg.patch; ++y)
                for (int x = 0; x < cfg.patch; ++x)
                    for (int c = 0; c < 3; ++c)
                        out.at(px * cfg.patch + x, py * cfg.patch + y, c) = row[k++];
        }
    return out;
}

// Standard sinusoidal embedding of the integer step, width d (even).
std::vector<double> timestep_embedding(int t, int d) {
    std::vector<double> e(static_cast<size_t>(d));
    const int half = d / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        e[size_t(2 * i)] = std::sin(double(t) * freq);
        e[size_t(2 * i + 1)] = std::cos(double(t) * freq);
    }
    return e;
}

void add_row_broadcast(Matrix& m, const std::vector<double>& row) {
    for (int i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (int j = 0; j < m.cols; ++j) r[j] += row[size_t(j)];
    }
}

void add_bias(Matrix& m, const Matrix& bias) {
    for (int i = 0; i < m.rows; ++i) {
        double* r = m.row(i);
        for (int j = 0; j < m.cols; ++j) r[j] += bias.v[size_t(j)];
    }
}

void add_colsum(Matrix& bias_grad, const Matrix& d) {
    for (int i = 0; i < d.rows; ++i) {
        const double* r = d.row(i);
        for (int j = 0; j < d.cols; ++j) bias_grad.v[size_t(j)] += r[j];
    }
}

}  // namespace

DenoiserModel DenoiserModel::zeros(const ModelConfig& cfg) {
    cfg.validate();
    DenoiserModel m;
    m.cfg = cfg;
    const int dh = cfg.d_hidden, p = cfg.patch_dim(), r = cfg.lora_rank;
    m.patch_w = Matrix(dh, p);
    m.patch_b = Matrix(1, dh);
    m.blocks.resize(size_t(cfg.n_blocks));
    for (auto& blk : m.blocks) {
        blk.norm1 = blk.norm2 = blk.norm3 = Matrix(1, dh);
        blk.self_attn.wq = blk.self_attn.wk = blk.self_attn.wv = blk.self_attn.wo = Matrix(dh, dh);
        blk.cross.wq = blk.cross.wk = blk.cross.wv = Matrix(dh, dh);
        blk.cross.aq = blk.cross.ak = blk.cross.av = Matrix(dh, r);
        blk.cross.bq = blk.cross.bk = blk.cross.bv = Matrix(r, dh);
        blk.cross.text_in = Matrix(dh, cfg.d_text);
        blk.cross.visual_in = Matrix(dh, cfg.d_visual);
        blk.ff.w1 = Matrix(cfg.d_ff, dh);
        blk.ff.b1 = Matrix(1, cfg.d_ff);
        blk.ff.w2 = Matrix(dh, cfg.d_ff);
        blk.ff.b2 = Matrix(1, dh);
    }
    m.final_norm = Matrix(1, dh);
    m.unembed_w = Matrix(p, dh);
    m.unembed_b = Matrix(1, p);
    return m;
}

DenoiserModel DenoiserModel::init(const ModelConfig& cfg, uint64_t seed) {
    DenoiserModel m = zeros(cfg);
    Rng r(hash_combine(seed, 0xd5a1f0e6ULL));
    auto gauss = [&r](Matrix& w) {
        const double scale = 1.0 / std::sqrt(double(w.cols));
        for (double& x : w.v) x = r.normal() * scale;
    };
    auto ones = [](Matrix& w) { w.fill(1.0); };

    gauss(m.patch_w);
    for (auto& blk : m.blocks) {
        ones(blk.norm1);
        ones(blk.norm2);
        ones(blk.norm3);
        gauss(blk.self_attn.wq);
        gauss(blk.self_attn.wk);
        gauss(blk.self_attn.wv);
        gauss(blk.self_attn.wo);
        gauss(blk.cross.wq);
        gauss(blk.cross.wk);
        gauss(blk.cross.wv);
        gauss(blk.cross.aq);
        gauss(blk.cross.ak);
        gauss(blk.cross.av);
        // bq/bk/bv stay zero: text-only behavior at step zero
        gauss(blk.cross.text_in);
        gauss(blk.cross.visual_in);
        gauss(blk.ff.w1);
        gauss(blk.ff.w2);
    }
    ones(m.final_norm);
    gauss(m.unembed_w);
    return m;
}

size_t DenoiserModel::param_count() const {
    size_t n = 0;
    visit([&n](const std::string&, ParamRole, const Matrix& w) { n += w.size(); });
    return n;
}

Image predict_noise(const DenoiserModel& m, const Image& x_t, int t, const Condition& cond,
                    DenoiserCache* cache) {
    const ModelConfig& cfg = m.cfg;
    if (cond.empty()) throw InvalidInput("predict_noise: missing condition");
    if (x_t.width != cfg.image_size || x_t.height != cfg.image_size)
        throw InvalidInput("predict_noise: image shape mismatch");
    if (t < 1) throw InvalidInput("predict_noise: t must be >= 1");
    if (cond.text_tokens.rows != cfg.cond_tokens || cond.text_tokens.cols != cfg.d_text)
        throw InvalidInput("predict_noise: text token shape mismatch");
    if (cond.visual.tokens.rows != cfg.cond_tokens || cond.visual.tokens.cols != cfg.d_visual)
        throw InvalidInput("predict_noise: visual token shape mismatch");

    Matrix patches = patchify(x_t, cfg);
    Matrix x = matmul_nt(patches, m.patch_w);
    add_bias(x, m.patch_b);
    add_row_broadcast(x, timestep_embedding(t, cfg.d_hidden));

    if (cache) {
        cache->t = t;
        cache->patches = patches;
        cache->blocks.assign(size_t(cfg.n_blocks), BlockCache{});
    }

    for (int b = 0; b < cfg.n_blocks; ++b) {
        const DenoiserBlock& blk = m.blocks[size_t(b)];
        BlockCache* bc = cache ? &cache->blocks[size_t(b)] : nullptr;

        Matrix xn1 = rms_norm(x, blk.norm1, bc ? &bc->n1 : nullptr);
        Matrix qs = matmul_nt(xn1, blk.self_attn.wq);
        Matrix ks = matmul_nt(xn1, blk.self_attn.wk);
        Matrix vs = matmul_nt(xn1, blk.self_attn.wv);
        Matrix attn = attention(qs, ks, vs, bc ? &bc->self_attn : nullptr);
        Matrix sa = matmul_nt(attn, blk.self_attn.wo);
        if (bc) {
            bc->xn1 = std::move(xn1);
            bc->self_attn_out = std::move(attn);
        }
        add_inplace(x, sa);

        Matrix xn2 = rms_norm(x, blk.norm2, bc ? &bc->n2 : nullptr);
        Matrix ca = dual_cross_attention_fw(xn2, cond.text_tokens, cond.visual.tokens, blk.cross,
                                            bc ? &bc->cross : nullptr);
        add_inplace(x, ca);

        Matrix xn3 = rms_norm(x, blk.norm3, bc ? &bc->n3 : nullptr);
        Matrix u = matmul_nt(xn3, blk.ff.w1);
        add_bias(u, blk.ff.b1);
        Matrix s(u.rows, u.cols);
        for (size_t i = 0; i < u.v.size(); ++i) s.v[i] = silu(u.v[i]);
        Matrix ff = matmul_nt(s, blk.ff.w2);
        add_bias(ff, blk.ff.b2);
        if (bc) {
            bc->xn3 = std::move(xn3);
            bc->ff_u = std::move(u);
            bc->ff_s = std::move(s);
        }
        add_inplace(x, ff);
    }

    Matrix xf = rms_norm(x, m.final_norm, cache ? &cache->final_n : nullptr);
    Matrix out_tokens = matmul_nt(xf, m.unembed_w);
    add_bias(out_tokens, m.unembed_b);
    if (cache) cache->x_final = std::move(xf);
    return unpatchify(out_tokens, cfg);
}

void predict_noise_backward(const DenoiserModel& m, const DenoiserCache& cache,
                            const Image& d_eps, DenoiserModel& grads, Matrix* d_visual_tokens) {
    const ModelConfig& cfg = m.cfg;
    Matrix d_out_tokens = patchify(d_eps, cfg);

    add_inplace(grads.unembed_w, matmul_tn(d_out_tokens, cache.x_final));
    add_colsum(grads.unembed_b, d_out_tokens);
    Matrix d_xf = matmul(d_out_tokens, m.unembed_w);

    Matrix d_x(cache.x_final.rows, cache.x_final.cols);
    rms_norm_backward(cache.final_n, m.final_norm, d_xf, d_x, grads.final_norm);

    for (int b = cfg.n_blocks - 1; b >= 0; --b) {
        const DenoiserBlock& blk = m.blocks[size_t(b)];
        const BlockCache& bc = cache.blocks[size_t(b)];
        DenoiserBlock& g = grads.blocks[size_t(b)];

        // feed-forward residual
        {
            const Matrix& d_ff = d_x;
            add_inplace(g.ff.w2, matmul_tn(d_ff, bc.ff_s));
            add_colsum(g.ff.b2, d_ff);
            Matrix d_s = matmul(d_ff, blk.ff.w2);
            Matrix d_u(d_s.rows, d_s.cols);
            for (size_t i = 0; i < d_s.v.size(); ++i)
                d_u.v[i] = d_s.v[i] * silu_grad(bc.ff_u.v[i]);
            add_inplace(g.ff.w1, matmul_tn(d_u, bc.xn3));
            add_colsum(g.ff.b1, d_u);
            Matrix d_xn3 = matmul(d_u, blk.ff.w1);
            rms_norm_backward(bc.n3, blk.norm3, d_xn3, d_x, g.norm3);
        }

        // cross-attention residual
        {
            const Matrix d_ca = d_x;  // copy: d_x keeps accumulating below
            Matrix d_xn2(d_ca.rows, d_ca.cols);
            dual_cross_attention_bw(bc.cross, blk.cross, d_ca, g.cross, &d_xn2, nullptr,
                                    d_visual_tokens);
            rms_norm_backward(bc.n2, blk.norm2, d_xn2, d_x, g.norm2);
        }

        // self-attention residual
        {
            const Matrix& d_sa = d_x;
            add_inplace(g.self_attn.wo, matmul_tn(d_sa, bc.self_attn_out));
            Matrix d_attn = matmul(d_sa, blk.self_attn.wo);
            Matrix d_q, d_k, d_v;
            attention_backward(bc.self_attn, d_attn, d_q, d_k, d_v);
            add_inplace(g.self_attn.wq, matmul_tn(d_q, bc.xn1));
            add_inplace(g.self_attn.wk, matmul_tn(d_k, bc.xn1));
            add_inplace(g.self_attn.wv, matmul_tn(d_v, bc.xn1));
            Matrix d_xn1 = matmul(d_q, blk.self_attn.wq);
            add_inplace(d_xn1, matmul(d_k, blk.self_attn.wk));
            add_inplace(d_xn1, matmul(d_v, blk.self_attn.wv));
            rms_norm_backward(bc.n1, blk.norm1, d_xn1, d_x, g.norm1);
        }
    }

    add_inplace(grads.patch_w, matmul_tn(d_x, cache.patches));
    add_colsum(grads.patch_b, d_x);
}

Image sample(const DenoiserModel& m, const Condition& cond, const NoiseSchedule& sched,
             uint64_t seed) {
    Rng r(hash_combine(seed, 0x5a3ecULL));
    Image x(m.cfg.image_size, m.cfg.image_size);
    for (double& v : x.rgb) v = r.normal();

    for (int t = sched.steps; t >= 1; --t) {
        const Image eps = predict_noise(m, x, t, cond);
        const double beta = sched.beta_at(t);
        const double coef = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
        const double inv = 1.0 / std::sqrt(1.0 - beta);
        const double sigma = std::sqrt(beta);
        for (size_t i = 0; i < x.rgb.size(); ++i) {
            x.rgb[i] = (x.rgb[i] - coef * eps.rgb[i]) * inv;
            if (t > 1) x.rgb[i] += sigma * r.normal();
        }
    }
    for (double& v : x.rgb) v = std::clamp(v, -1.0, 1.0);
    return x;
}

void save_checkpoint(const std::string& path, const DenoiserModel& m) {
    BinWriter w(path);
    w.bytes("EDCK", 4);
    w.u32(1);
    const uint32_t cfg_fields[10] = {
        uint32_t(m.cfg.image_size), uint32_t(m.cfg.channels), uint32_t(m.cfg.patch),
        uint32_t(m.cfg.d_hidden),   uint32_t(m.cfg.d_ff),     uint32_t(m.cfg.n_blocks),
        uint32_t(m.cfg.lora_rank),  uint32_t(m.cfg.d_text),   uint32_t(m.cfg.d_visual),
        uint32_t(m.cfg.cond_tokens)};
    w.u32(10);
    for (uint32_t f : cfg_fields) w.u32(f);
    uint32_t n_tensors = 0;
    m.visit([&n_tensors](const std::string&, ParamRole, const Matrix&) { ++n_tensors; });
    w.u32(n_tensors);
    m.visit([&w](const std::string& name, ParamRole, const Matrix& t) {
        w.str(name);
        w.u32(uint32_t(t.rows));
        w.u32(uint32_t(t.cols));
        for (double x : t.v) w.f32(float(x));
    });
    w.close();
}

DenoiserModel load_checkpoint(const std::string& path) {
    BinReader r(path);
    char magic[4];
    for (char& c : magic) c = char(r.u8());
    if (std::memcmp(magic, "EDCK", 4) != 0) throw ParseError("not a checkpoint file: " + path);
    if (r.u32() != 1) throw ParseError("unsupported checkpoint version: " + path);
    if (r.u32() != 10) throw ParseError("unexpected config block size: " + path);

    ModelConfig cfg;
    cfg.image_size = int(r.u32());
    cfg.channels = int(r.u32());
    cfg.patch = int(r.u32());
    cfg.d_hidden = int(r.u32());
    cfg.d_ff = int(r.u32());
    cfg.n_blocks = int(r.u32());
    cfg.lora_rank = int(r.u32());
    cfg.d_text = int(r.u32());
    cfg.d_visual = int(r.u32());
    cfg.cond_tokens = int(r.u32());

    DenoiserModel m = DenoiserModel::zeros(cfg);
    uint32_t n_tensors = r.u32();
    uint32_t seen = 0;
    m.visit([&](const std::string& name, ParamRole, Matrix& t) {
        const std::string got = r.str(4096);
        if (got != name)
            throw ParseError("checkpoint tensor order mismatch: expected '" + name + "', got '" +
                             got + "' in " + path);
        const uint32_t rows = r.u32(), cols = r.u32();
        if (int(rows) != t.rows || int(cols) != t.cols)
            throw ParseError("checkpoint tensor shape mismatch for '" + name + "' in " + path);
        for (double& x : t.v) x = double(r.f32());
        ++seen;
    });
    if (seen != n_tensors) throw ParseError("checkpoint tensor count mismatch: " + path);
    if (!r.at_eof()) throw ParseError("trailing bytes in checkpoint: " + path);
    return m;
}

}  // namespace emodir
