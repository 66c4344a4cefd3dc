#pragma once

// Plain-loop GPT-2 forward pass in double precision. Shares no code with the
// engine; used as an oracle for logits, NLLs and finite differences.

#include "gptd/engine.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace gptd::testing {

using Mat = std::vector<std::vector<double>>;

inline const std::vector<float>& w(const Model& m, const std::string& name) { return m.weights.at(name).data; }

inline Mat ref_layer_norm(const Mat& x, const std::vector<float>& g, const std::vector<float>& b) {
    Mat out = x;
    for (size_t r = 0; r < x.size(); ++r) {
        const size_t d = x[r].size();
        double mu = 0.0;
        for (double v : x[r]) mu += v;
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (double v : x[r]) var += (v - mu) * (v - mu);
        var /= static_cast<double>(d);
        for (size_t i = 0; i < d; ++i) out[r][i] = (x[r][i] - mu) / std::sqrt(var + 1e-5) * g[i] + b[i];
    }
    return out;
}

// Conv1D: y = x W + b with W stored [in x out].
inline Mat ref_linear(const Mat& x, const std::vector<float>& weight, const std::vector<float>& bias, size_t in, size_t out) {
    Mat y(x.size(), std::vector<double>(out));
    for (size_t r = 0; r < x.size(); ++r) {
        for (size_t o = 0; o < out; ++o) {
            double s = bias[o];
            for (size_t i = 0; i < in; ++i) s += x[r][i] * weight[i * out + o];
            y[r][o] = s;
        }
    }
    return y;
}

inline double ref_gelu(double x) {
    const double c = std::sqrt(2.0 / 3.14159265358979323846);
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

// Token embeddings [seq][d] in, logits [seq][vocab] out.
inline Mat ref_logits_from_embeddings(const Model& m, const Mat& tok_emb) {
    const auto& c = m.config;
    const size_t d = c.d_model, hd = c.head_dim(), T = tok_emb.size();
    Mat x = tok_emb;
    const auto& wpe = w(m, "wpe.weight");
    for (size_t t = 0; t < T; ++t) {
        for (size_t i = 0; i < d; ++i) x[t][i] += wpe[t * d + i];
    }
    for (int l = 0; l < c.n_layers; ++l) {
        auto name = [&](const char* s) { return tensor_names::layer(l, s); };
        const Mat h = ref_layer_norm(x, w(m, name("ln_1.weight")), w(m, name("ln_1.bias")));
        const Mat qkv = ref_linear(h, w(m, name("attn.c_attn.weight")), w(m, name("attn.c_attn.bias")), d, 3 * d);
        Mat att(T, std::vector<double>(d, 0.0));
        for (int head = 0; head < c.n_heads; ++head) {
            const size_t off = static_cast<size_t>(head) * hd;
            for (size_t i = 0; i < T; ++i) {
                std::vector<double> s(i + 1);
                double mx = -1e300;
                for (size_t j = 0; j <= i; ++j) {
                    double dot = 0.0;
                    for (size_t k = 0; k < hd; ++k) dot += qkv[i][off + k] * qkv[j][d + off + k];
                    s[j] = dot / std::sqrt(static_cast<double>(hd));
                    mx = std::max(mx, s[j]);
                }
                double z = 0.0;
                for (auto& v : s) z += (v = std::exp(v - mx));
                for (size_t j = 0; j <= i; ++j) {
                    for (size_t k = 0; k < hd; ++k) att[i][off + k] += s[j] / z * qkv[j][2 * d + off + k];
                }
            }
        }
        const Mat proj = ref_linear(att, w(m, name("attn.c_proj.weight")), w(m, name("attn.c_proj.bias")), d, d);
        for (size_t t = 0; t < T; ++t) {
            for (size_t i = 0; i < d; ++i) x[t][i] += proj[t][i];
        }
        const Mat h2 = ref_layer_norm(x, w(m, name("ln_2.weight")), w(m, name("ln_2.bias")));
        Mat fc = ref_linear(h2, w(m, name("mlp.c_fc.weight")), w(m, name("mlp.c_fc.bias")), d, 4 * d);
        for (auto& row : fc) {
            for (auto& v : row) v = ref_gelu(v);
        }
        const Mat mlp = ref_linear(fc, w(m, name("mlp.c_proj.weight")), w(m, name("mlp.c_proj.bias")), 4 * d, d);
        for (size_t t = 0; t < T; ++t) {
            for (size_t i = 0; i < d; ++i) x[t][i] += mlp[t][i];
        }
    }
    const Mat hf = ref_layer_norm(x, w(m, "ln_f.weight"), w(m, "ln_f.bias"));
    const auto& wte = w(m, "wte.weight");
    Mat logits(T, std::vector<double>(static_cast<size_t>(c.vocab_size)));
    for (size_t t = 0; t < T; ++t) {
        for (size_t v = 0; v < static_cast<size_t>(c.vocab_size); ++v) {
            double s = 0.0;
            for (size_t i = 0; i < d; ++i) s += hf[t][i] * wte[v * d + i];
            logits[t][v] = s;
        }
    }
    return logits;
}

inline Mat ref_embeddings(const Model& m, std::span<const int> ids) {
    const size_t d = m.config.d_model;
    const auto& wte = w(m, "wte.weight");
    Mat e(ids.size(), std::vector<double>(d));
    for (size_t t = 0; t < ids.size(); ++t) {
        for (size_t i = 0; i < d; ++i) e[t][i] = wte[static_cast<size_t>(ids[t]) * d + i];
    }
    return e;
}

inline Mat ref_logits(const Model& m, std::span<const int> ids) { return ref_logits_from_embeddings(m, ref_embeddings(m, ids)); }

// Sum of -log p(ids[i] | ids[<i]) for i >= 1.
inline double ref_nll(const Model& m, std::span<const int> ids) {
    const Mat logits = ref_logits(m, ids);
    double nll = 0.0;
    for (size_t t = 0; t + 1 < ids.size(); ++t) {
        double mx = -1e300;
        for (double v : logits[t]) mx = std::max(mx, v);
        double z = 0.0;
        for (double v : logits[t]) z += std::exp(v - mx);
        nll -= logits[t][static_cast<size_t>(ids[t + 1])] - mx - std::log(z);
    }
    return nll;
}

}  // namespace gptd::testing
