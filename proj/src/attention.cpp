#include "emodir/attention.hpp"

#include <algorithm>
#include <cmath>

namespace emodir {

Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, AttnCache* cache) {
    if (q.cols != k.cols || k.rows != v.rows) throw InvalidInput("attention: shape mismatch");
    const double scale = 1.0 / std::sqrt(double(q.cols));

    Matrix scores = matmul_nt(q, k);
    scale_inplace(scores, scale);
    for (int i = 0; i < scores.rows; ++i) {
        double* row = scores.row(i);
        double mx = row[0];
        for (int j = 1; j < scores.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < scores.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (int j = 0; j < scores.cols; ++j) row[j] *= inv;
    }

    Matrix out = matmul(scores, v);
    if (cache) {
        cache->q = q;
        cache->k = k;
        cache->v = v;
        cache->probs = std::move(scores);
    }
    return out;
}

void attention_backward(const AttnCache& cache, const Matrix& d_out, Matrix& d_q, Matrix& d_k,
                        Matrix& d_v) {
    const double scale = 1.0 / std::sqrt(double(cache.q.cols));
    const Matrix& probs = cache.probs;

    // d_probs, then the softmax jacobian applied row-wise.
    Matrix d_probs = matmul_nt(d_out, cache.v);
    Matrix d_scores(probs.rows, probs.cols);
    for (int i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        const double* dp = d_probs.row(i);
        double inner = 0.0;
        for (int j = 0; j < probs.cols; ++j) inner += dp[j] * p[j];
        double* ds = d_scores.row(i);
        for (int j = 0; j < probs.cols; ++j) ds[j] = p[j] * (dp[j] - inner) * scale;
    }

    if (d_v.rows == 0) d_v = Matrix(cache.v.rows, cache.v.cols);
    add_inplace(d_v, matmul_tn(probs, d_out));
    if (d_q.rows == 0) d_q = Matrix(cache.q.rows, cache.q.cols);
    add_inplace(d_q, matmul(d_scores, cache.k));
    if (d_k.rows == 0) d_k = Matrix(cache.k.rows, cache.k.cols);
    add_inplace(d_k, matmul_tn(d_scores, cache.q));
}

Matrix rms_norm(const Matrix& x, const Matrix& gain, RmsNormCache* cache) {
    if (gain.cols != x.cols || gain.rows != 1) throw InvalidInput("rms_norm: bad gain shape");
    Matrix y(x.rows, x.cols);
    std::vector<double> inv_rms(size_t(x.rows));
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double ms = 0.0;
        for (int j = 0; j < x.cols; ++j) ms += xr[j] * xr[j];
        const double inv = 1.0 / std::sqrt(ms / double(x.cols) + 1e-8);
        inv_rms[size_t(i)] = inv;
        double* yr = y.row(i);
        for (int j = 0; j < x.cols; ++j) yr[j] = xr[j] * inv * gain.v[size_t(j)];
    }
    if (cache) {
        cache->x = x;
        cache->inv_rms = std::move(inv_rms);
    }
    return y;
}

void rms_norm_backward(const RmsNormCache& cache, const Matrix& gain, const Matrix& d_y,
                       Matrix& d_x, Matrix& d_gain) {
    const Matrix& x = cache.x;
    const int n = x.cols;
    if (d_x.rows == 0) d_x = Matrix(x.rows, x.cols);
    if (d_gain.rows == 0) d_gain = Matrix(1, n);
    for (int i = 0; i < x.rows; ++i) {
        const double r = cache.inv_rms[size_t(i)];
        const double* xr = x.row(i);
        const double* dyr = d_y.row(i);
        double inner = 0.0;  // sum_k dy_k g_k x_k
        for (int j = 0; j < n; ++j) inner += dyr[j] * gain.v[size_t(j)] * xr[j];
        const double coef = inner * r * r * r / double(n);
        double* dxr = d_x.row(i);
        for (int j = 0; j < n; ++j) {
            dxr[j] += gain.v[size_t(j)] * dyr[j] * r - xr[j] * coef;
            d_gain.v[size_t(j)] += dyr[j] * xr[j] * r;
        }
    }
}

Matrix dual_cross_attention_fw(const Matrix& x, const Matrix& text_tokens,
                               const Matrix& visual_tokens, const DualAttentionWeights& w,
                               DualAttnCache* cache) {
    if (text_tokens.rows != visual_tokens.rows)
        throw InvalidInput("dual_cross_attention: text/visual token counts differ");
    if (text_tokens.cols != w.text_in.cols || visual_tokens.cols != w.visual_in.cols)
        throw InvalidInput("dual_cross_attention: token width mismatch");
    if (x.cols != w.wq.cols) throw InvalidInput("dual_cross_attention: hidden width mismatch");

    Matrix h_text = matmul_nt(text_tokens, w.text_in);
    Matrix h_visual = matmul_nt(visual_tokens, w.visual_in);

    // Text branch: full base projections.
    Matrix q_t = matmul_nt(x, w.wq);
    Matrix k_t = matmul_nt(h_text, w.wk);
    Matrix v_t = matmul_nt(h_text, w.wv);
    Matrix out = attention(q_t, k_t, v_t, cache ? &cache->text_attn : nullptr);

    // Visual branch: rank-r products only, no base weight.
    Matrix tq = matmul_nt(x, w.bq);
    Matrix q_v = matmul_nt(tq, w.aq);
    Matrix uk = matmul_nt(h_visual, w.bk);
    Matrix k_v = matmul_nt(uk, w.ak);
    Matrix uv = matmul_nt(h_visual, w.bv);
    Matrix v_v = matmul_nt(uv, w.av);
    Matrix out_v = attention(q_v, k_v, v_v, cache ? &cache->visual_attn : nullptr);

    add_inplace(out, out_v);
    if (cache) {
        cache->x = x;
        cache->text_tokens = text_tokens;
        cache->visual_tokens = visual_tokens;
        cache->h_text = std::move(h_text);
        cache->h_visual = std::move(h_visual);
        cache->tq = std::move(tq);
        cache->uk = std::move(uk);
        cache->uv = std::move(uv);
    }
    return out;
}

void dual_cross_attention_bw(const DualAttnCache& cache, const DualAttentionWeights& w,
                             const Matrix& d_out, DualAttentionWeights& grads, Matrix* d_x,
                             Matrix* d_text_tokens, Matrix* d_visual_tokens) {
    // Text branch.
    Matrix d_qt, d_kt, d_vt;
    attention_backward(cache.text_attn, d_out, d_qt, d_kt, d_vt);

    add_inplace(grads.wq, matmul_tn(d_qt, cache.x));
    add_inplace(grads.wk, matmul_tn(d_kt, cache.h_text));
    add_inplace(grads.wv, matmul_tn(d_vt, cache.h_text));
    Matrix d_h_text = matmul(d_kt, w.wk);
    add_inplace(d_h_text, matmul(d_vt, w.wv));
    if (d_x) add_inplace(*d_x, matmul(d_qt, w.wq));

    add_inplace(grads.text_in, matmul_tn(d_h_text, cache.text_tokens));
    if (d_text_tokens) add_inplace(*d_text_tokens, matmul(d_h_text, w.text_in));

    // Visual branch.
    Matrix d_qv, d_kv, d_vv;
    attention_backward(cache.visual_attn, d_out, d_qv, d_kv, d_vv);

    add_inplace(grads.aq, matmul_tn(d_qv, cache.tq));
    Matrix d_tq = matmul(d_qv, w.aq);
    add_inplace(grads.bq, matmul_tn(d_tq, cache.x));
    if (d_x) add_inplace(*d_x, matmul(d_tq, w.bq));

    add_inplace(grads.ak, matmul_tn(d_kv, cache.uk));
    Matrix d_uk = matmul(d_kv, w.ak);
    add_inplace(grads.bk, matmul_tn(d_uk, cache.h_visual));
    Matrix d_h_visual = matmul(d_uk, w.bk);

    add_inplace(grads.av, matmul_tn(d_vv, cache.uv));
    Matrix d_uv = matmul(d_vv, w.av);
    add_inplace(grads.bv, matmul_tn(d_uv, cache.h_visual));
    add_inplace(d_h_visual, matmul(d_uv, w.bv));

    add_inplace(grads.visual_in, matmul_tn(d_h_visual, cache.visual_tokens));
    if (d_visual_tokens) add_inplace(*d_visual_tokens, matmul(d_h_visual, w.visual_in));
}

}  // namespace emodir
