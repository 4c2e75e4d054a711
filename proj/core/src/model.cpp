#include "trajlab/model.hpp"

#include "trajlab/checkpoint.hpp"
#include "trajlab/errors.hpp"
#include "trajlab/io.hpp"
#include "trajlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace trajlab {

namespace {

constexpr real kLnEps = static_cast<real>(1e-5);
constexpr double kGeluK = 0.7978845608028654; // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

// C[M,N] (+)= A[M,K] * B[K,N]
void matmul(const real* A, const real* B, real* C, int64_t M, int64_t K, int64_t N,
            bool accumulate) {
    if (!accumulate) {
        std::fill(C, C + M * N, real(0));
    }
    for (int64_t m = 0; m < M; ++m) {
        const real* a_row = A + m * K;
        real* c_row = C + m * N;
        for (int64_t k = 0; k < K; ++k) {
            const real a = a_row[k];
            if (a == real(0)) {
                continue;
            }
            const real* b_row = B + k * N;
            for (int64_t n = 0; n < N; ++n) {
                c_row[n] += a * b_row[n];
            }
        }
    }
}

// C[M,K] (+)= A[M,N] * B[K,N]^T
void matmul_nt(const real* A, const real* B, real* C, int64_t M, int64_t N, int64_t K,
               bool accumulate) {
    if (!accumulate) {
        std::fill(C, C + M * K, real(0));
    }
    for (int64_t m = 0; m < M; ++m) {
        const real* a_row = A + m * N;
        real* c_row = C + m * K;
        for (int64_t k = 0; k < K; ++k) {
            const real* b_row = B + k * N;
            real acc = 0;
            for (int64_t n = 0; n < N; ++n) {
                acc += a_row[n] * b_row[n];
            }
            c_row[k] += acc;
        }
    }
}

// C[K,N] (+)= A[M,K]^T * B[M,N]
void matmul_tn(const real* A, const real* B, real* C, int64_t M, int64_t K, int64_t N,
               bool accumulate) {
    if (!accumulate) {
        std::fill(C, C + K * N, real(0));
    }
    for (int64_t m = 0; m < M; ++m) {
        const real* a_row = A + m * K;
        const real* b_row = B + m * N;
        for (int64_t k = 0; k < K; ++k) {
            const real a = a_row[k];
            if (a == real(0)) {
                continue;
            }
            real* c_row = C + k * N;
            for (int64_t n = 0; n < N; ++n) {
                c_row[n] += a * b_row[n];
            }
        }
    }
}

void add_bias(real* X, const real* b, int64_t M, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        real* row = X + m * N;
        for (int64_t n = 0; n < N; ++n) {
            row[n] += b[n];
        }
    }
}

void bias_grad(const real* dY, real* db, int64_t M, int64_t N) {
    for (int64_t m = 0; m < M; ++m) {
        const real* row = dY + m * N;
        for (int64_t n = 0; n < N; ++n) {
            db[n] += row[n];
        }
    }
}

real gelu(real x) {
    const real u = static_cast<real>(kGeluK) * (x + static_cast<real>(kGeluC) * x * x * x);
    return real(0.5) * x * (real(1) + std::tanh(u));
}

real gelu_grad(real x) {
    const real u = static_cast<real>(kGeluK) * (x + static_cast<real>(kGeluC) * x * x * x);
    const real t = std::tanh(u);
    const real du = static_cast<real>(kGeluK) * (real(1) + real(3) * static_cast<real>(kGeluC) * x * x);
    return real(0.5) * (real(1) + t) + real(0.5) * x * (real(1) - t * t) * du;
}

struct LnCache {
    std::vector<real> xhat;    // [M, C]
    std::vector<real> inv_std; // [M]
};

void layernorm_forward(const real* x, const real* gain, const real* bias, int64_t M, int64_t C,
                       real* y, LnCache& cache) {
    cache.xhat.resize(static_cast<size_t>(M * C));
    cache.inv_std.resize(static_cast<size_t>(M));
    for (int64_t m = 0; m < M; ++m) {
        const real* row = x + m * C;
        real mean = 0;
        for (int64_t c = 0; c < C; ++c) {
            mean += row[c];
        }
        mean /= static_cast<real>(C);
        real var = 0;
        for (int64_t c = 0; c < C; ++c) {
            const real d = row[c] - mean;
            var += d * d;
        }
        var /= static_cast<real>(C);
        const real inv = real(1) / std::sqrt(var + kLnEps);
        cache.inv_std[static_cast<size_t>(m)] = inv;
        real* xh = cache.xhat.data() + m * C;
        real* out = y + m * C;
        for (int64_t c = 0; c < C; ++c) {
            xh[c] = (row[c] - mean) * inv;
            out[c] = xh[c] * gain[c] + bias[c];
        }
    }
}

// Accumulates dgain/dbias; writes dx (overwrite).
void layernorm_backward(const real* dy, const LnCache& cache, const real* gain, int64_t M,
                        int64_t C, real* dx, real* dgain, real* dbias) {
    for (int64_t m = 0; m < M; ++m) {
        const real* dy_row = dy + m * C;
        const real* xh = cache.xhat.data() + m * C;
        const real inv = cache.inv_std[static_cast<size_t>(m)];
        real sum_dxhat = 0;
        real sum_dxhat_xhat = 0;
        for (int64_t c = 0; c < C; ++c) {
            dgain[c] += dy_row[c] * xh[c];
            dbias[c] += dy_row[c];
            const real dxh = dy_row[c] * gain[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[c];
        }
        const real inv_c = real(1) / static_cast<real>(C);
        real* dx_row = dx + m * C;
        for (int64_t c = 0; c < C; ++c) {
            const real dxh = dy_row[c] * gain[c];
            dx_row[c] = inv * (dxh - sum_dxhat * inv_c - xh[c] * sum_dxhat_xhat * inv_c);
        }
    }
}

struct LayerCache {
    std::vector<real> x_in;  // [M, C] input to the block
    LnCache ln1;
    std::vector<real> y1;    // [M, C]
    std::vector<real> q, k, v;
    std::vector<real> alpha; // [B, H, T, T]
    std::vector<real> mix;   // [M, C]
    std::vector<real> x_mid; // [M, C] after attention residual
    LnCache ln2;
    std::vector<real> y2;    // [M, C]
    std::vector<real> f1;    // [M, F] pre-activation
    std::vector<real> act;   // [M, F]
};

struct ForwardCache {
    int64_t rows = 0;
    int64_t seq_len = 0;
    std::vector<int32_t> first_real;
    std::vector<real> x0;      // [M, C] embeddings
    std::vector<LayerCache> layers;
    std::vector<real> x_final; // [M, C] input to the final norm
    LnCache lnf;
    std::vector<real> yf;      // [M, C] normalized
    std::vector<real> logprob; // [M, V]
};

void attention_forward(const Parameters& p, const LayerCache& lc, const int32_t* first_real,
                       int64_t B, int64_t T, std::vector<real>& alpha, std::vector<real>& mix) {
    const int64_t C = p.config.d_model;
    const int64_t H = p.config.n_heads;
    const int64_t hs = C / H;
    const real scale = real(1) / std::sqrt(static_cast<real>(hs));

    alpha.assign(static_cast<size_t>(B * H * T * T), real(0));
    mix.assign(static_cast<size_t>(B * T * C), real(0));
    std::vector<real> scores(static_cast<size_t>(T));

    for (int64_t b = 0; b < B; ++b) {
        const int64_t fr = first_real[b];
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t t = fr; t < T; ++t) {
                const real* q_vec = lc.q.data() + (b * T + t) * C + h * hs;
                real max_score = -std::numeric_limits<real>::infinity();
                for (int64_t u = fr; u <= t; ++u) {
                    const real* k_vec = lc.k.data() + (b * T + u) * C + h * hs;
                    real s = 0;
                    for (int64_t j = 0; j < hs; ++j) {
                        s += q_vec[j] * k_vec[j];
                    }
                    s *= scale;
                    scores[static_cast<size_t>(u)] = s;
                    max_score = std::max(max_score, s);
                }
                real denom = 0;
                for (int64_t u = fr; u <= t; ++u) {
                    const real e = std::exp(scores[static_cast<size_t>(u)] - max_score);
                    scores[static_cast<size_t>(u)] = e;
                    denom += e;
                }
                real* a_row = alpha.data() + ((b * H + h) * T + t) * T;
                real* m_vec = mix.data() + (b * T + t) * C + h * hs;
                for (int64_t u = fr; u <= t; ++u) {
                    const real a = scores[static_cast<size_t>(u)] / denom;
                    a_row[u] = a;
                    const real* v_vec = lc.v.data() + (b * T + u) * C + h * hs;
                    for (int64_t j = 0; j < hs; ++j) {
                        m_vec[j] += a * v_vec[j];
                    }
                }
            }
        }
    }
}

void attention_backward(const Parameters& p, const LayerCache& lc, const int32_t* first_real,
                        int64_t B, int64_t T, const std::vector<real>& dmix, std::vector<real>& dq,
                        std::vector<real>& dk, std::vector<real>& dv) {
    const int64_t C = p.config.d_model;
    const int64_t H = p.config.n_heads;
    const int64_t hs = C / H;
    const real scale = real(1) / std::sqrt(static_cast<real>(hs));

    dq.assign(static_cast<size_t>(B * T * C), real(0));
    dk.assign(static_cast<size_t>(B * T * C), real(0));
    dv.assign(static_cast<size_t>(B * T * C), real(0));
    std::vector<real> dalpha(static_cast<size_t>(T));

    for (int64_t b = 0; b < B; ++b) {
        const int64_t fr = first_real[b];
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t t = fr; t < T; ++t) {
                const real* dm_vec = dmix.data() + (b * T + t) * C + h * hs;
                const real* a_row = lc.alpha.data() + ((b * H + h) * T + t) * T;
                real weighted = 0;
                for (int64_t u = fr; u <= t; ++u) {
                    const real* v_vec = lc.v.data() + (b * T + u) * C + h * hs;
                    real d = 0;
                    for (int64_t j = 0; j < hs; ++j) {
                        d += dm_vec[j] * v_vec[j];
                    }
                    dalpha[static_cast<size_t>(u)] = d;
                    weighted += a_row[u] * d;
                    real* dv_vec = dv.data() + (b * T + u) * C + h * hs;
                    const real a = a_row[u];
                    for (int64_t j = 0; j < hs; ++j) {
                        dv_vec[j] += a * dm_vec[j];
                    }
                }
                const real* q_vec = lc.q.data() + (b * T + t) * C + h * hs;
                real* dq_vec = dq.data() + (b * T + t) * C + h * hs;
                for (int64_t u = fr; u <= t; ++u) {
                    const real ds = a_row[u] * (dalpha[static_cast<size_t>(u)] - weighted) * scale;
                    if (ds == real(0)) {
                        continue;
                    }
                    const real* k_vec = lc.k.data() + (b * T + u) * C + h * hs;
                    real* dk_vec = dk.data() + (b * T + u) * C + h * hs;
                    for (int64_t j = 0; j < hs; ++j) {
                        dq_vec[j] += ds * k_vec[j];
                        dk_vec[j] += ds * q_vec[j];
                    }
                }
            }
        }
    }
}

// Shared forward pass over a padded batch of rows. Writes normalized
// log-probability rows into cache.logprob.
void forward_pass(const Parameters& p, const int32_t* ids, const int32_t* first_real, int64_t B,
                  int64_t T, ForwardCache& cache) {
    const ModelConfig& cfg = p.config;
    const int64_t C = cfg.d_model;
    const int64_t F = cfg.d_ff;
    const int64_t V = cfg.vocab_size;
    const int64_t M = B * T;

    if (T > cfg.context_len) {
        throw ValueError("sequence length " + std::to_string(T) + " exceeds context_len " +
                         std::to_string(cfg.context_len));
    }
    for (int64_t i = 0; i < M; ++i) {
        if (ids[i] < 0 || ids[i] >= V) {
            throw ValueError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                             std::to_string(V));
        }
    }

    cache.rows = B;
    cache.seq_len = T;
    cache.first_real.assign(first_real, first_real + B);
    cache.x0.resize(static_cast<size_t>(M * C));
    cache.layers.resize(static_cast<size_t>(cfg.n_layers));

    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            const int64_t pos = std::max<int64_t>(0, t - first_real[b]);
            const real* tok_row = p.tok_emb.ptr() + ids[b * T + t] * C;
            const real* pos_row = p.pos_emb.ptr() + pos * C;
            real* out = cache.x0.data() + (b * T + t) * C;
            for (int64_t c = 0; c < C; ++c) {
                out[c] = tok_row[c] + pos_row[c];
            }
        }
    }

    cache.layers[0].x_in = cache.x0;
    for (int64_t l = 0; l < cfg.n_layers; ++l) {
        LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerParams& lp = p.layers[static_cast<size_t>(l)];

        lc.y1.resize(static_cast<size_t>(M * C));
        layernorm_forward(lc.x_in.data(), lp.ln1_g.ptr(), lp.ln1_b.ptr(), M, C, lc.y1.data(),
                          lc.ln1);

        lc.q.resize(static_cast<size_t>(M * C));
        lc.k.resize(static_cast<size_t>(M * C));
        lc.v.resize(static_cast<size_t>(M * C));
        matmul(lc.y1.data(), lp.wq.ptr(), lc.q.data(), M, C, C, false);
        add_bias(lc.q.data(), lp.bq.ptr(), M, C);
        matmul(lc.y1.data(), lp.wk.ptr(), lc.k.data(), M, C, C, false);
        add_bias(lc.k.data(), lp.bk.ptr(), M, C);
        matmul(lc.y1.data(), lp.wv.ptr(), lc.v.data(), M, C, C, false);
        add_bias(lc.v.data(), lp.bv.ptr(), M, C);

        attention_forward(p, lc, first_real, B, T, lc.alpha, lc.mix);

        lc.x_mid.resize(static_cast<size_t>(M * C));
        matmul(lc.mix.data(), lp.wo.ptr(), lc.x_mid.data(), M, C, C, false);
        add_bias(lc.x_mid.data(), lp.bo.ptr(), M, C);
        for (int64_t i = 0; i < M * C; ++i) {
            lc.x_mid[static_cast<size_t>(i)] += lc.x_in[static_cast<size_t>(i)];
        }

        lc.y2.resize(static_cast<size_t>(M * C));
        layernorm_forward(lc.x_mid.data(), lp.ln2_g.ptr(), lp.ln2_b.ptr(), M, C, lc.y2.data(),
                          lc.ln2);

        lc.f1.resize(static_cast<size_t>(M * F));
        matmul(lc.y2.data(), lp.w_ff1.ptr(), lc.f1.data(), M, C, F, false);
        add_bias(lc.f1.data(), lp.b_ff1.ptr(), M, F);
        lc.act.resize(static_cast<size_t>(M * F));
        for (int64_t i = 0; i < M * F; ++i) {
            lc.act[static_cast<size_t>(i)] = gelu(lc.f1[static_cast<size_t>(i)]);
        }

        std::vector<real> x_out(static_cast<size_t>(M * C));
        matmul(lc.act.data(), lp.w_ff2.ptr(), x_out.data(), M, F, C, false);
        add_bias(x_out.data(), lp.b_ff2.ptr(), M, C);
        for (int64_t i = 0; i < M * C; ++i) {
            x_out[static_cast<size_t>(i)] += lc.x_mid[static_cast<size_t>(i)];
        }
        if (l + 1 < cfg.n_layers) {
            cache.layers[static_cast<size_t>(l + 1)].x_in = std::move(x_out);
        } else {
            cache.x_final = std::move(x_out);
        }
    }

    cache.yf.resize(static_cast<size_t>(M * C));
    layernorm_forward(cache.x_final.data(), p.lnf_g.ptr(), p.lnf_b.ptr(), M, C, cache.yf.data(),
                      cache.lnf);

    cache.logprob.resize(static_cast<size_t>(M * V));
    matmul(cache.yf.data(), p.w_out.ptr(), cache.logprob.data(), M, C, V, false);
    add_bias(cache.logprob.data(), p.b_out.ptr(), M, V);
    for (int64_t m = 0; m < M; ++m) {
        real* row = cache.logprob.data() + m * V;
        real mx = row[0];
        for (int64_t v = 1; v < V; ++v) {
            mx = std::max(mx, row[v]);
        }
        real sum = 0;
        for (int64_t v = 0; v < V; ++v) {
            sum += std::exp(row[v] - mx);
        }
        const real lse = mx + std::log(sum);
        for (int64_t v = 0; v < V; ++v) {
            row[v] -= lse;
        }
    }
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || context_len < 1 ||
        vocab_size < 1) {
        throw ValueError("model config: all counts must be at least 1");
    }
    if (d_model % n_heads != 0) {
        throw ValueError("model config: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
    }
}

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    int64_t n = 1;
    for (int64_t d : t.shape) {
        n *= d;
    }
    t.data.assign(static_cast<size_t>(n), real(0));
    return t;
}

Parameters Parameters::zeros(const ModelConfig& cfg) {
    cfg.validate();
    Parameters p;
    p.config = cfg;
    const int64_t C = cfg.d_model;
    p.tok_emb = Tensor::zeros({cfg.vocab_size, C});
    p.pos_emb = Tensor::zeros({cfg.context_len, C});
    p.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
        l.ln1_g = Tensor::zeros({C});
        l.ln1_b = Tensor::zeros({C});
        l.wq = Tensor::zeros({C, C});
        l.bq = Tensor::zeros({C});
        l.wk = Tensor::zeros({C, C});
        l.bk = Tensor::zeros({C});
        l.wv = Tensor::zeros({C, C});
        l.bv = Tensor::zeros({C});
        l.wo = Tensor::zeros({C, C});
        l.bo = Tensor::zeros({C});
        l.ln2_g = Tensor::zeros({C});
        l.ln2_b = Tensor::zeros({C});
        l.w_ff1 = Tensor::zeros({C, cfg.d_ff});
        l.b_ff1 = Tensor::zeros({cfg.d_ff});
        l.w_ff2 = Tensor::zeros({cfg.d_ff, C});
        l.b_ff2 = Tensor::zeros({C});
    }
    p.lnf_g = Tensor::zeros({C});
    p.lnf_b = Tensor::zeros({C});
    p.w_out = Tensor::zeros({C, cfg.vocab_size});
    p.b_out = Tensor::zeros({cfg.vocab_size});
    return p;
}

void Parameters::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        fn(prefix + "ln1_g", layers[l].ln1_g);
        fn(prefix + "ln1_b", layers[l].ln1_b);
        fn(prefix + "wq", layers[l].wq);
        fn(prefix + "bq", layers[l].bq);
        fn(prefix + "wk", layers[l].wk);
        fn(prefix + "bk", layers[l].bk);
        fn(prefix + "wv", layers[l].wv);
        fn(prefix + "bv", layers[l].bv);
        fn(prefix + "wo", layers[l].wo);
        fn(prefix + "bo", layers[l].bo);
        fn(prefix + "ln2_g", layers[l].ln2_g);
        fn(prefix + "ln2_b", layers[l].ln2_b);
        fn(prefix + "w_ff1", layers[l].w_ff1);
        fn(prefix + "b_ff1", layers[l].b_ff1);
        fn(prefix + "w_ff2", layers[l].w_ff2);
        fn(prefix + "b_ff2", layers[l].b_ff2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    fn("w_out", w_out);
    fn("b_out", b_out);
}

void Parameters::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<Parameters*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { fn(name, t); });
}

bool Parameters::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const Tensor& t) {
        for (real v : t.data) {
            if (!std::isfinite(static_cast<double>(v))) {
                ok = false;
                return;
            }
        }
    });
    return ok;
}

Parameters init_parameters(const ModelConfig& cfg) {
    Parameters p = Parameters::zeros(cfg);
    Rng rng(cfg.seed);
    const real std_dev = static_cast<real>(0.02);
    auto fill_normal = [&](Tensor& t) {
        for (real& v : t.data) {
            v = std_dev * static_cast<real>(rng.next_normal());
        }
    };
    auto fill_ones = [](Tensor& t) { std::fill(t.data.begin(), t.data.end(), real(1)); };

    fill_normal(p.tok_emb);
    fill_normal(p.pos_emb);
    for (auto& l : p.layers) {
        fill_ones(l.ln1_g);
        fill_normal(l.wq);
        fill_normal(l.wk);
        fill_normal(l.wv);
        fill_normal(l.wo);
        fill_ones(l.ln2_g);
        fill_normal(l.w_ff1);
        fill_normal(l.w_ff2);
    }
    fill_ones(p.lnf_g);
    fill_normal(p.w_out);
    return p;
}

std::vector<real> forward_logprobs(const Parameters& p, std::span<const int32_t> token_ids,
                                   std::span<const uint8_t> pad_mask) {
    const int64_t T = static_cast<int64_t>(token_ids.size());
    if (T == 0) {
        throw ValueError("forward_logprobs: empty sequence");
    }
    if (!pad_mask.empty() && static_cast<int64_t>(pad_mask.size()) != T) {
        throw ValueError("forward_logprobs: pad mask length mismatch");
    }
    int32_t first_real = 0;
    if (!pad_mask.empty()) {
        int64_t t = 0;
        while (t < T && pad_mask[static_cast<size_t>(t)]) {
            ++t;
        }
        first_real = static_cast<int32_t>(t);
        for (; t < T; ++t) {
            if (pad_mask[static_cast<size_t>(t)]) {
                throw ValueError("forward_logprobs: padding must be a left prefix");
            }
        }
    }
    ForwardCache cache;
    forward_pass(p, token_ids.data(), &first_real, 1, T, cache);
    return std::move(cache.logprob);
}

void forward_logprobs_batch(const Parameters& p, const int32_t* token_ids,
                            const int32_t* first_real, int64_t rows, int64_t seq_len,
                            std::vector<real>& out) {
    ForwardCache cache;
    forward_pass(p, token_ids, first_real, rows, seq_len, cache);
    out = std::move(cache.logprob);
}

LossAndGrads loss_and_grads(const Parameters& p, const Batch& batch) {
    const ModelConfig& cfg = p.config;
    const int64_t B = batch.batch_size;
    const int64_t T = batch.context_len;
    const int64_t C = cfg.d_model;
    const int64_t F = cfg.d_ff;
    const int64_t V = cfg.vocab_size;
    const int64_t M = B * T;

    if (B < 1 || static_cast<int64_t>(batch.token_ids.size()) != M ||
        static_cast<int64_t>(batch.target_ids.size()) != M) {
        throw ValueError("loss_and_grads: batch buffers disagree with declared shape");
    }

    std::vector<int32_t> first_real(static_cast<size_t>(B), 0);
    ForwardCache cache;
    forward_pass(p, batch.token_ids.data(), first_real.data(), B, T, cache);

    // Scored positions: targets inside the vocabulary that are not pad.
    int64_t n_scored = 0;
    for (int64_t i = 0; i < M; ++i) {
        const int32_t tgt = batch.target_ids[static_cast<size_t>(i)];
        if (tgt == batch.pad_id || tgt < 0) {
            continue;
        }
        if (tgt >= V) {
            throw ValueError("loss_and_grads: target id " + std::to_string(tgt) +
                             " outside vocabulary");
        }
        ++n_scored;
    }
    if (n_scored == 0) {
        throw ValueError("loss_and_grads: batch contains only pad targets");
    }

    double loss = 0.0;
    for (int64_t i = 0; i < M; ++i) {
        const int32_t tgt = batch.target_ids[static_cast<size_t>(i)];
        if (tgt == batch.pad_id || tgt < 0) {
            continue;
        }
        loss -= static_cast<double>(cache.logprob[static_cast<size_t>(i * V + tgt)]);
    }
    loss /= static_cast<double>(n_scored);

    LossAndGrads out;
    out.loss = loss;
    out.grads = Parameters::zeros(cfg);
    Parameters& g = out.grads;

    // d logits
    std::vector<real> dlogits(static_cast<size_t>(M * V), real(0));
    const real inv_n = real(1) / static_cast<real>(n_scored);
    for (int64_t i = 0; i < M; ++i) {
        const int32_t tgt = batch.target_ids[static_cast<size_t>(i)];
        if (tgt == batch.pad_id || tgt < 0) {
            continue;
        }
        real* row = dlogits.data() + i * V;
        const real* lp = cache.logprob.data() + i * V;
        for (int64_t v = 0; v < V; ++v) {
            row[v] = std::exp(lp[v]) * inv_n;
        }
        row[tgt] -= inv_n;
    }

    // Output head.
    std::vector<real> dyf(static_cast<size_t>(M * C));
    matmul_nt(dlogits.data(), p.w_out.ptr(), dyf.data(), M, V, C, false);
    matmul_tn(cache.yf.data(), dlogits.data(), g.w_out.ptr(), M, C, V, true);
    bias_grad(dlogits.data(), g.b_out.ptr(), M, V);

    std::vector<real> dx(static_cast<size_t>(M * C));
    layernorm_backward(dyf.data(), cache.lnf, p.lnf_g.ptr(), M, C, dx.data(), g.lnf_g.ptr(),
                       g.lnf_b.ptr());

    std::vector<real> dy2(static_cast<size_t>(M * C));
    std::vector<real> df1(static_cast<size_t>(M * F));
    std::vector<real> dmix(static_cast<size_t>(M * C));
    std::vector<real> dy1(static_cast<size_t>(M * C));
    std::vector<real> dq, dk, dv;
    std::vector<real> dx_mid(static_cast<size_t>(M * C));

    for (int64_t l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerParams& lp = p.layers[static_cast<size_t>(l)];
        LayerParams& lg = g.layers[static_cast<size_t>(l)];

        // Feed-forward sub-block: x_out = x_mid + W2(gelu(W1 y2 + b1)) + b2.
        // dx currently holds d x_out.
        matmul_tn(lc.act.data(), dx.data(), lg.w_ff2.ptr(), M, F, C, true);
        bias_grad(dx.data(), lg.b_ff2.ptr(), M, C);
        matmul_nt(dx.data(), lp.w_ff2.ptr(), df1.data(), M, C, F, false);
        for (int64_t i = 0; i < M * F; ++i) {
            df1[static_cast<size_t>(i)] *= gelu_grad(lc.f1[static_cast<size_t>(i)]);
        }
        matmul_tn(lc.y2.data(), df1.data(), lg.w_ff1.ptr(), M, C, F, true);
        bias_grad(df1.data(), lg.b_ff1.ptr(), M, F);
        matmul_nt(df1.data(), lp.w_ff1.ptr(), dy2.data(), M, F, C, false);

        layernorm_backward(dy2.data(), lc.ln2, lp.ln2_g.ptr(), M, C, dx_mid.data(), lg.ln2_g.ptr(),
                           lg.ln2_b.ptr());
        for (int64_t i = 0; i < M * C; ++i) {
            dx_mid[static_cast<size_t>(i)] += dx[static_cast<size_t>(i)]; // residual
        }

        // Attention sub-block: x_mid = x_in + Wo mix + bo.
        matmul_tn(lc.mix.data(), dx_mid.data(), lg.wo.ptr(), M, C, C, true);
        bias_grad(dx_mid.data(), lg.bo.ptr(), M, C);
        matmul_nt(dx_mid.data(), lp.wo.ptr(), dmix.data(), M, C, C, false);

        attention_backward(p, lc, cache.first_real.data(), B, T, dmix, dq, dk, dv);

        matmul_tn(lc.y1.data(), dq.data(), lg.wq.ptr(), M, C, C, true);
        bias_grad(dq.data(), lg.bq.ptr(), M, C);
        matmul_tn(lc.y1.data(), dk.data(), lg.wk.ptr(), M, C, C, true);
        bias_grad(dk.data(), lg.bk.ptr(), M, C);
        matmul_tn(lc.y1.data(), dv.data(), lg.wv.ptr(), M, C, C, true);
        bias_grad(dv.data(), lg.bv.ptr(), M, C);

        matmul_nt(dq.data(), lp.wq.ptr(), dy1.data(), M, C, C, false);
        matmul_nt(dk.data(), lp.wk.ptr(), dy1.data(), M, C, C, true);
        matmul_nt(dv.data(), lp.wv.ptr(), dy1.data(), M, C, C, true);

        layernorm_backward(dy1.data(), lc.ln1, lp.ln1_g.ptr(), M, C, dx.data(), lg.ln1_g.ptr(),
                           lg.ln1_b.ptr());
        for (int64_t i = 0; i < M * C; ++i) {
            dx[static_cast<size_t>(i)] += dx_mid[static_cast<size_t>(i)]; // residual
        }
    }

    // Embedding gradients.
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            const int64_t i = b * T + t;
            const real* dx_row = dx.data() + i * C;
            real* tok_row = g.tok_emb.ptr() + batch.token_ids[static_cast<size_t>(i)] * C;
            real* pos_row = g.pos_emb.ptr() + t * C;
            for (int64_t c = 0; c < C; ++c) {
                tok_row[c] += dx_row[c];
                pos_row[c] += dx_row[c];
            }
        }
    }
    return out;
}

AdamState AdamState::zeros(const ModelConfig& cfg) {
    AdamState s;
    s.m = Parameters::zeros(cfg);
    s.v = Parameters::zeros(cfg);
    s.t = 0;
    return s;
}

namespace {

std::vector<Tensor*> tensor_list(Parameters& p) {
    std::vector<Tensor*> out;
    p.for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
    return out;
}

} // namespace

void adam_step(Parameters& params, const Parameters& grads, AdamState& state,
               const OptimizerSettings& opt) {
    ++state.t;
    auto ps = tensor_list(params);
    auto gs = tensor_list(const_cast<Parameters&>(grads));
    auto ms = tensor_list(state.m);
    auto vs = tensor_list(state.v);
    const real b1 = static_cast<real>(opt.beta1);
    const real b2 = static_cast<real>(opt.beta2);
    const real lr = static_cast<real>(opt.learning_rate);
    const real eps = static_cast<real>(opt.epsilon);
    const real bc1 = real(1) - static_cast<real>(std::pow(opt.beta1, static_cast<double>(state.t)));
    const real bc2 = real(1) - static_cast<real>(std::pow(opt.beta2, static_cast<double>(state.t)));
    for (size_t i = 0; i < ps.size(); ++i) {
        real* p = ps[i]->ptr();
        const real* g = gs[i]->ptr();
        real* m = ms[i]->ptr();
        real* v = vs[i]->ptr();
        const int64_t n = ps[i]->size();
        for (int64_t j = 0; j < n; ++j) {
            m[j] = b1 * m[j] + (real(1) - b1) * g[j];
            v[j] = b2 * v[j] + (real(1) - b2) * g[j] * g[j];
            const real mhat = m[j] / bc1;
            const real vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

void rewrite_log_upto(const std::filesystem::path& log_path, int64_t max_step,
                      std::string& log_text) {
    log_text = "step,loss\n";
    if (!std::filesystem::exists(log_path)) {
        return;
    }
    const std::string existing = read_text_file(log_path);
    auto lines = split(existing, '\n');
    std::string kept = "step,loss\n";
    for (size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        auto cols = split(lines[i], ',');
        if (cols.size() != 2) {
            continue;
        }
        if (parse_int(cols[0]) <= max_step) {
            kept += lines[i] + "\n";
        }
    }
    log_text = kept;
}

} // namespace

TrainResult train(const ModelConfig& cfg, const TrainSettings& settings, BatchStream& batches,
                  const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    CheckpointRecord rec;
    AdamState adam = AdamState::zeros(cfg);
    int64_t start_step = 0;

    const auto existing = list_checkpoint_steps(out_dir);
    TrainResult result;
    if (!existing.empty()) {
        // Resume from the newest checkpoint not beyond max_steps.
        int64_t resume_step = -1;
        for (int64_t s : existing) {
            if (s <= settings.max_steps) {
                resume_step = std::max(resume_step, s);
            }
        }
        if (resume_step < 0) {
            throw ValueError("train: existing checkpoints all beyond max_steps in " +
                             out_dir.string());
        }
        rec = load_checkpoint(out_dir / checkpoint_filename(resume_step));
        if (!(rec.config == cfg)) {
            throw ShapeMismatchError("train: checkpoint in " + out_dir.string() +
                                     " was produced by a different model config");
        }
        if (rec.data_seed != batches.seed()) {
            throw ValueError("train: checkpoint data seed disagrees with the batch stream");
        }
        batches.restore(rec.data_state);
        adam.m = rec.adam_m;
        adam.v = rec.adam_v;
        adam.t = rec.step;
        start_step = rec.step;
        for (int64_t s : existing) {
            if (s <= resume_step) {
                result.checkpoint_steps.push_back(s);
            }
        }
    } else {
        rec.config = cfg;
        rec.step = 0;
        rec.params = init_parameters(cfg);
        rec.adam_m = adam.m;
        rec.adam_v = adam.v;
        rec.data_seed = batches.seed();
        rec.data_state = batches.state();
        save_checkpoint(rec, out_dir / checkpoint_filename(0));
        result.checkpoint_steps.push_back(0);
    }

    const auto log_path = out_dir / "train_log.csv";
    std::string log_text;
    rewrite_log_upto(log_path, start_step, log_text);

    double last_loss = 0.0;
    for (int64_t step = start_step + 1; step <= settings.max_steps; ++step) {
        Batch batch = batches.next();
        auto lg = loss_and_grads(rec.params, batch);
        if (!std::isfinite(lg.loss)) {
            write_text_file(log_path, log_text);
            throw TrainingError("training aborted: non-finite loss at step " +
                                std::to_string(step));
        }
        adam_step(rec.params, lg.grads, adam, settings.optimizer);
        last_loss = lg.loss;
        log_text += std::to_string(step) + "," + format_double(lg.loss) + "\n";

        if (step % settings.checkpoint_every == 0 || step == settings.max_steps) {
            if (!rec.params.all_finite()) {
                write_text_file(log_path, log_text);
                throw TrainingError("training aborted: non-finite parameter at step " +
                                    std::to_string(step));
            }
            rec.step = step;
            rec.adam_m = adam.m;
            rec.adam_v = adam.v;
            rec.data_state = batches.state();
            const auto path = out_dir / checkpoint_filename(step);
            if (std::find(result.checkpoint_steps.begin(), result.checkpoint_steps.end(), step) ==
                result.checkpoint_steps.end()) {
                save_checkpoint(rec, path);
                result.checkpoint_steps.push_back(step);
            }
        }
    }

    write_text_file(log_path, log_text);
    result.log_path = log_path;
    result.final_loss = last_loss;
    std::sort(result.checkpoint_steps.begin(), result.checkpoint_steps.end());
    return result;
}

} // namespace trajlab
