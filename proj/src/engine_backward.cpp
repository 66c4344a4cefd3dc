// Reverse-mode differentiation of one final-position logit with respect to
// the input token embeddings. Weights are constants here; only activation
// gradients are propagated.

#include "engine_internal.hpp"
#include "gptd/error.hpp"

namespace gptd {

namespace {

using namespace detail;

struct BlockTape {
    std::vector<float> x_in, ln1_mean, ln1_rstd, qkv, probs;
    std::vector<float> x_mid, ln2_mean, ln2_rstd, pre_gelu;
};

// dx += layernorm backward of dy at inputs x with saved statistics.
void layer_norm_backward(const float* dy, const float* x, const float* mean, const float* rstd, const Tensor& g,
                         int rows, int d, float* dx) {
    std::vector<float> dxhat(d);
    for (int r = 0; r < rows; ++r) {
        const float* dyr = dy + static_cast<size_t>(r) * d;
        const float* xr = x + static_cast<size_t>(r) * d;
        float* dxr = dx + static_cast<size_t>(r) * d;
        float mean_dxhat = 0.0f, mean_dxhat_xhat = 0.0f;
        for (int i = 0; i < d; ++i) {
            dxhat[i] = dyr[i] * g.data[i];
            const float xhat = (xr[i] - mean[r]) * rstd[r];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat;
        }
        mean_dxhat /= static_cast<float>(d);
        mean_dxhat_xhat /= static_cast<float>(d);
        for (int i = 0; i < d; ++i) {
            const float xhat = (xr[i] - mean[r]) * rstd[r];
            dxr[i] += rstd[r] * (dxhat[i] - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
}

// out[rows x k] = dy[rows x n] * W^T where W is [k x n]
void linear_backward_input(const float* dy, int rows, const Tensor& w, float* out) {
    const auto k = w.shape[0];
    const auto n = w.shape[1];
    MatrixMap(out, rows, k).noalias() = ConstMatrixMap(dy, rows, n) * as_matrix(w).transpose();
}

void block_forward(const Model& model, int layer, std::vector<float>& x, int rows, BlockTape& tape) {
    const auto& c = model.config;
    const int d = c.d_model;
    const size_t n = static_cast<size_t>(rows);
    const LayerRefs w = layer_refs(model, layer);

    tape.x_in = x;
    tape.ln1_mean.resize(n);
    tape.ln1_rstd.resize(n);
    std::vector<float> a(n * d), att(n * d), proj(n * d);
    tape.qkv.resize(n * 3 * d);
    tape.probs.resize(static_cast<size_t>(c.n_heads) * n * n);
    layer_norm(x.data(), rows, d, *w.ln1_w, *w.ln1_b, a.data(), tape.ln1_mean.data(), tape.ln1_rstd.data());
    linear(a.data(), rows, *w.qkv_w, *w.qkv_b, tape.qkv.data());
    causal_attention(tape.qkv.data(), 3 * d, tape.qkv.data() + d, tape.qkv.data() + 2 * d, 3 * d, rows, rows, 0,
                     c.n_heads, c.head_dim(), att.data(), tape.probs.data());
    linear(att.data(), rows, *w.proj_w, *w.proj_b, proj.data());
    for (size_t i = 0; i < n * d; ++i) x[i] += proj[i];

    tape.x_mid = x;
    tape.ln2_mean.resize(n);
    tape.ln2_rstd.resize(n);
    std::vector<float> m(n * d), hidden(n * 4 * d), out(n * d);
    tape.pre_gelu.resize(n * 4 * d);
    layer_norm(x.data(), rows, d, *w.ln2_w, *w.ln2_b, m.data(), tape.ln2_mean.data(), tape.ln2_rstd.data());
    linear(m.data(), rows, *w.fc_w, *w.fc_b, tape.pre_gelu.data());
    for (size_t i = 0; i < hidden.size(); ++i) hidden[i] = gelu(tape.pre_gelu[i]);
    linear(hidden.data(), rows, *w.out_w, *w.out_b, out.data());
    for (size_t i = 0; i < n * d; ++i) x[i] += out[i];
}

// dx holds d(loss)/d(block output) on entry and d(loss)/d(block input) on exit.
void block_backward(const Model& model, int layer, const BlockTape& tape, int rows, std::vector<float>& dx) {
    const auto& c = model.config;
    const int d = c.d_model;
    const int hd = c.head_dim();
    const size_t n = static_cast<size_t>(rows);
    const LayerRefs w = layer_refs(model, layer);

    // MLP branch: out = W_out gelu(W_fc ln2(x_mid))
    std::vector<float> dhidden(n * 4 * d), dm(n * d);
    linear_backward_input(dx.data(), rows, *w.out_w, dhidden.data());
    for (size_t i = 0; i < dhidden.size(); ++i) dhidden[i] *= gelu_grad(tape.pre_gelu[i]);
    linear_backward_input(dhidden.data(), rows, *w.fc_w, dm.data());
    std::vector<float> dmid = dx;
    layer_norm_backward(dm.data(), tape.x_mid.data(), tape.ln2_mean.data(), tape.ln2_rstd.data(), *w.ln2_w, rows, d,
                        dmid.data());

    // Attention branch.
    std::vector<float> datt(n * d);
    linear_backward_input(dmid.data(), rows, *w.proj_w, datt.data());
    std::vector<float> dqkv(n * 3 * d, 0.0f);
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    std::vector<float> dp(n);
    for (int h = 0; h < c.n_heads; ++h) {
        const int off = h * hd;
        const float* probs = tape.probs.data() + static_cast<size_t>(h) * n * n;
        for (size_t i = 0; i < n; ++i) {
            const float* dout = datt.data() + i * d + off;
            const float* p = probs + i * n;
            float dot = 0.0f;
            for (size_t j = 0; j <= i; ++j) {
                const float* v = tape.qkv.data() + j * 3 * d + 2 * d + off;
                float* dv = dqkv.data() + j * 3 * d + 2 * d + off;
                float s = 0.0f;
                for (int k = 0; k < hd; ++k) {
                    s += dout[k] * v[k];
                    dv[k] += p[j] * dout[k];
                }
                dp[j] = s;
                dot += p[j] * s;
            }
            const float* q = tape.qkv.data() + i * 3 * d + off;
            float* dq = dqkv.data() + i * 3 * d + off;
            for (size_t j = 0; j <= i; ++j) {
                const float ds = p[j] * (dp[j] - dot) * scale;
                if (ds == 0.0f) continue;
                const float* key = tape.qkv.data() + j * 3 * d + d + off;
                float* dkey = dqkv.data() + j * 3 * d + d + off;
                for (int k = 0; k < hd; ++k) {
                    dq[k] += ds * key[k];
                    dkey[k] += ds * q[k];
                }
            }
        }
    }
    std::vector<float> da(n * d);
    linear_backward_input(dqkv.data(), rows, *w.qkv_w, da.data());
    dx = std::move(dmid);
    layer_norm_backward(da.data(), tape.x_in.data(), tape.ln1_mean.data(), tape.ln1_rstd.data(), *w.ln1_w, rows, d,
                        dx.data());
}

}  // namespace

EmbeddingGradient logit_gradient_wrt_embeddings(const Model& model, std::span<const float> embeddings, int target) {
    const auto& c = model.config;
    const int d = c.d_model;
    if (embeddings.empty() || embeddings.size() % d != 0) {
        throw InvalidInput("embeddings must be a non-empty [seq x " + std::to_string(d) + "] matrix");
    }
    if (target < 0 || target >= c.vocab_size) throw InvalidInput("target token out of range");
    const int rows = static_cast<int>(embeddings.size() / d);

    std::vector<float> x(embeddings.size());
    embed(model, {}, embeddings, 0, x.data());
    std::vector<BlockTape> tapes(c.n_layers);
    for (int l = 0; l < c.n_layers; ++l) block_forward(model, l, x, rows, tapes[l]);

    const Tensor& gf = model.weights.at(tensor_names::kFinalNormWeight);
    const Tensor& bf = model.weights.at(tensor_names::kFinalNormBias);
    const float* last = x.data() + static_cast<size_t>(rows - 1) * d;
    std::vector<float> normed(d);
    float mean = 0.0f, rstd = 0.0f;
    layer_norm(last, 1, d, gf, bf, normed.data(), &mean, &rstd);
    const float* row = model.weights.at(tensor_names::kTokenEmbedding).data.data() + static_cast<size_t>(target) * d;

    EmbeddingGradient result;
    for (int i = 0; i < d; ++i) result.logit += normed[i] * row[i];

    std::vector<float> dx(embeddings.size(), 0.0f);
    layer_norm_backward(row, last, &mean, &rstd, gf, 1, d, dx.data() + static_cast<size_t>(rows - 1) * d);
    for (int l = c.n_layers - 1; l >= 0; --l) block_backward(model, l, tapes[l], rows, dx);
    result.grad = std::move(dx);
    return result;
}

}  // namespace gptd
