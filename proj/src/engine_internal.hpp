#pragma once

// Shared pieces of the forward and backward passes.

#include "gptd/engine.hpp"

#include <Eigen/Core>

namespace gptd::detail {

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline constexpr float kLayerNormEps = 1e-5f;
// Added to attention scores of future positions before the softmax.
inline constexpr float kCausalMaskValue = -1e9f;

struct LayerRefs {
    const Tensor* ln1_w;
    const Tensor* ln1_b;
    const Tensor* qkv_w;
    const Tensor* qkv_b;
    const Tensor* proj_w;
    const Tensor* proj_b;
    const Tensor* ln2_w;
    const Tensor* ln2_b;
    const Tensor* fc_w;
    const Tensor* fc_b;
    const Tensor* out_w;
    const Tensor* out_b;
};

LayerRefs layer_refs(const Model& model, int layer);

inline ConstMatrixMap as_matrix(const Tensor& t) {
    return ConstMatrixMap(t.data.data(), t.shape.at(0), t.shape.at(1));
}

// out[rows x d] = layernorm(x) * g + b. mean/rstd optionally receive per-row statistics.
void layer_norm(const float* x, int rows, int d, const Tensor& g, const Tensor& b, float* out,
                float* mean = nullptr, float* rstd = nullptr);

// out[rows x n] = x[rows x k] * W[k x n] + bias[n]
void linear(const float* x, int rows, const Tensor& w, const Tensor& bias, float* out);

float gelu(float x);
float gelu_grad(float x);

// Causal attention of `q_rows` queries (global positions past..past+q_rows-1)
// against `k_rows` keys. Head h occupies columns [h*head_dim, (h+1)*head_dim)
// of each q/k/v row. out is [q_rows x n_heads*head_dim]; probs, if given,
// receives [n_heads x q_rows x k_rows].
void causal_attention(const float* q, int q_stride, const float* k, const float* v, int kv_stride, int q_rows,
                      int k_rows, int past, int n_heads, int head_dim, float* out, float* probs = nullptr);

// Adds token (optional) and positional embeddings for positions [past, past+rows).
void embed(const Model& model, std::span<const int> ids, std::span<const float> token_embeddings, int past,
           float* out);

}  // namespace gptd::detail
