#include "gptd/engine.hpp"

#include "engine_internal.hpp"
#include "gptd/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gptd {

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || vocab_size <= 1 || context_window <= 1) {
        throw InvalidInput("model config dimensions must be positive");
    }
    if (d_model % n_heads != 0) throw InvalidInput("d_model must be a multiple of n_heads");
}

std::string tensor_names::layer(int index, const char* suffix) {
    return "h." + std::to_string(index) + "." + suffix;
}

std::vector<std::pair<std::string, std::vector<int64_t>>> expected_tensors(const ModelConfig& c) {
    const int64_t d = c.d_model;
    std::vector<std::pair<std::string, std::vector<int64_t>>> out = {
        {tensor_names::kTokenEmbedding, {c.vocab_size, d}},
        {tensor_names::kPositionEmbedding, {c.context_window, d}},
    };
    for (int l = 0; l < c.n_layers; ++l) {
        auto add = [&](const char* suffix, std::vector<int64_t> shape) {
            out.emplace_back(tensor_names::layer(l, suffix), std::move(shape));
        };
        add("ln_1.weight", {d});
        add("ln_1.bias", {d});
        add("attn.c_attn.weight", {d, 3 * d});
        add("attn.c_attn.bias", {3 * d});
        add("attn.c_proj.weight", {d, d});
        add("attn.c_proj.bias", {d});
        add("ln_2.weight", {d});
        add("ln_2.bias", {d});
        add("mlp.c_fc.weight", {d, 4 * d});
        add("mlp.c_fc.bias", {4 * d});
        add("mlp.c_proj.weight", {4 * d, d});
        add("mlp.c_proj.bias", {d});
    }
    out.emplace_back(tensor_names::kFinalNormWeight, std::vector<int64_t>{d});
    out.emplace_back(tensor_names::kFinalNormBias, std::vector<int64_t>{d});
    return out;
}

void validate_weights(const TensorArchive& archive, const ModelConfig& config) {
    config.validate();
    for (const auto& [name, shape] : expected_tensors(config)) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end()) throw LoadError(LoadErrorKind::MissingTensor, "missing tensor '" + name + "'");
        if (it->second.shape != shape) {
            throw LoadError(LoadErrorKind::ShapeMismatch, "tensor '" + name + "' has shape " + shape_string(it->second.shape) +
                                                              ", expected " + shape_string(shape));
        }
        for (float v : it->second.data) {
            if (!std::isfinite(v)) throw LoadError(LoadErrorKind::NonFinite, "tensor '" + name + "' contains NaN/Inf");
        }
    }
}

ModelConfig infer_config(const TensorArchive& archive) {
    ModelConfig c;
    const auto& wte = archive.at(tensor_names::kTokenEmbedding);
    const auto& wpe = archive.at(tensor_names::kPositionEmbedding);
    if (wte.shape.size() != 2 || wpe.shape.size() != 2) {
        throw LoadError(LoadErrorKind::ShapeMismatch, "embedding tensors must be 2-D");
    }
    c.vocab_size = static_cast<int>(wte.shape[0]);
    c.d_model = static_cast<int>(wte.shape[1]);
    c.context_window = static_cast<int>(wpe.shape[0]);
    c.n_layers = 0;
    while (archive.contains(tensor_names::layer(c.n_layers, "ln_1.weight"))) ++c.n_layers;
    if (auto it = archive.metadata.find("n_head"); it != archive.metadata.end()) {
        c.n_heads = std::stoi(it->second);
    } else {
        c.n_heads = std::max(1, c.d_model / 64);
    }
    return c;
}

TensorArchive load_weights(const std::filesystem::path& path, const ModelConfig& config) {
    TensorArchive archive = TensorArchive::read_safetensors(path);
    validate_weights(archive, config);
    return archive;
}

Model::Model(ModelConfig config_, TensorArchive weights_) : config(config_), weights(std::move(weights_)) {
    validate_weights(weights, config);
}

Model Model::load(const std::filesystem::path& path) {
    TensorArchive archive = TensorArchive::read_safetensors(path);
    const ModelConfig config = infer_config(archive);
    return Model(config, std::move(archive));
}

Model Model::load(const std::filesystem::path& path, const ModelConfig& config) {
    return Model(config, load_weights(path, config));
}

namespace detail {

LayerRefs layer_refs(const Model& model, int l) {
    const auto& w = model.weights;
    auto get = [&](const char* suffix) { return &w.at(tensor_names::layer(l, suffix)); };
    return {get("ln_1.weight"),       get("ln_1.bias"),          get("attn.c_attn.weight"), get("attn.c_attn.bias"),
            get("attn.c_proj.weight"), get("attn.c_proj.bias"),   get("ln_2.weight"),        get("ln_2.bias"),
            get("mlp.c_fc.weight"),    get("mlp.c_fc.bias"),      get("mlp.c_proj.weight"),  get("mlp.c_proj.bias")};
}

void layer_norm(const float* x, int rows, int d, const Tensor& g, const Tensor& b, float* out, float* mean,
                float* rstd) {
    for (int r = 0; r < rows; ++r) {
        const float* xr = x + static_cast<size_t>(r) * d;
        float* yr = out + static_cast<size_t>(r) * d;
        float mu = 0.0f;
        for (int i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<float>(d);
        float var = 0.0f;
        for (int i = 0; i < d; ++i) {
            const float c = xr[i] - mu;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float rs = 1.0f / std::sqrt(var + kLayerNormEps);
        for (int i = 0; i < d; ++i) yr[i] = (xr[i] - mu) * rs * g.data[i] + b.data[i];
        if (mean) mean[r] = mu;
        if (rstd) rstd[r] = rs;
    }
}

void linear(const float* x, int rows, const Tensor& w, const Tensor& bias, float* out) {
    const auto k = w.shape[0];
    const auto n = w.shape[1];
    ConstMatrixMap in(x, rows, k);
    MatrixMap y(out, rows, n);
    y.noalias() = in * as_matrix(w);
    y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.data.data(), n);
}

namespace {
constexpr float kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;
}  // namespace

// tanh approximation used by GPT-2
float gelu(float x) {
    return 0.5f * x * (1.0f + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

float gelu_grad(float x) {
    const float t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * kGeluC * (1.0f + 3.0f * kGeluA * x * x);
}

void causal_attention(const float* q, int q_stride, const float* k, const float* v, int kv_stride, int q_rows,
                      int k_rows, int past, int n_heads, int head_dim, float* out, float* probs) {
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
    const int width = n_heads * head_dim;
    std::vector<float> scores(static_cast<size_t>(k_rows));
    for (int h = 0; h < n_heads; ++h) {
        const int off = h * head_dim;
        for (int i = 0; i < q_rows; ++i) {
            const float* qi = q + static_cast<size_t>(i) * q_stride + off;
            const int pos = past + i;
            float mx = -std::numeric_limits<float>::infinity();
            for (int j = 0; j < k_rows; ++j) {
                const float* kj = k + static_cast<size_t>(j) * kv_stride + off;
                float s = 0.0f;
                for (int c = 0; c < head_dim; ++c) s += qi[c] * kj[c];
                s *= scale;
                if (j > pos) s += kCausalMaskValue;
                scores[j] = s;
                mx = std::max(mx, s);
            }
            float sum = 0.0f;
            for (int j = 0; j < k_rows; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                sum += scores[j];
            }
            const float inv = 1.0f / sum;
            float* oi = out + static_cast<size_t>(i) * width + off;
            std::fill(oi, oi + head_dim, 0.0f);
            for (int j = 0; j < k_rows; ++j) {
                const float p = scores[j] * inv;
                if (probs) probs[(static_cast<size_t>(h) * q_rows + i) * k_rows + j] = p;
                if (p == 0.0f) continue;
                const float* vj = v + static_cast<size_t>(j) * kv_stride + off;
                for (int c = 0; c < head_dim; ++c) oi[c] += p * vj[c];
            }
        }
    }
}

void embed(const Model& model, std::span<const int> ids, std::span<const float> token_embeddings, int past,
           float* out) {
    const int d = model.config.d_model;
    const auto& wte = model.weights.at(tensor_names::kTokenEmbedding);
    const auto& wpe = model.weights.at(tensor_names::kPositionEmbedding);
    const size_t rows = ids.empty() ? token_embeddings.size() / d : ids.size();
    if (past + rows > static_cast<size_t>(model.config.context_window)) {
        throw InvalidInput("sequence of " + std::to_string(past + rows) + " positions exceeds the context window of " +
                           std::to_string(model.config.context_window));
    }
    for (size_t r = 0; r < rows; ++r) {
        const float* tok;
        if (ids.empty()) {
            tok = token_embeddings.data() + r * d;
        } else {
            const int id = ids[r];
            if (id < 0 || id >= model.config.vocab_size) throw InvalidInput("token id out of range: " + std::to_string(id));
            tok = wte.data.data() + static_cast<size_t>(id) * d;
        }
        const float* pos = wpe.data.data() + (past + r) * d;
        float* o = out + r * d;
        for (int i = 0; i < d; ++i) o[i] = tok[i] + pos[i];
    }
}

}  // namespace detail

namespace {

using namespace detail;

// One decoder block applied in place to x [rows x d]. With caches, keys/values of
// the new rows are appended and attention covers the cached prefix.
void run_block(const Model& model, int layer, float* x, int rows, int past, std::vector<float>* k_cache,
               std::vector<float>* v_cache) {
    const auto& c = model.config;
    const int d = c.d_model;
    const LayerRefs w = layer_refs(model, layer);
    const size_t n = static_cast<size_t>(rows);

    std::vector<float> a(n * d), qkv(n * 3 * d), att(n * d), proj(n * d);
    layer_norm(x, rows, d, *w.ln1_w, *w.ln1_b, a.data());
    linear(a.data(), rows, *w.qkv_w, *w.qkv_b, qkv.data());

    const float* keys = qkv.data() + d;
    const float* values = qkv.data() + 2 * d;
    int kv_stride = 3 * d;
    int k_rows = rows;
    if (k_cache) {
        for (size_t r = 0; r < n; ++r) {
            const float* row = qkv.data() + r * 3 * d;
            k_cache->insert(k_cache->end(), row + d, row + 2 * d);
            v_cache->insert(v_cache->end(), row + 2 * d, row + 3 * d);
        }
        keys = k_cache->data();
        values = v_cache->data();
        kv_stride = d;
        k_rows = past + rows;
    }
    causal_attention(qkv.data(), 3 * d, keys, values, kv_stride, rows, k_rows, past, c.n_heads, c.head_dim(),
                     att.data());
    linear(att.data(), rows, *w.proj_w, *w.proj_b, proj.data());
    for (size_t i = 0; i < n * d; ++i) x[i] += proj[i];

    std::vector<float> m(n * d), hidden(n * 4 * d), out(n * d);
    layer_norm(x, rows, d, *w.ln2_w, *w.ln2_b, m.data());
    linear(m.data(), rows, *w.fc_w, *w.fc_b, hidden.data());
    for (float& h : hidden) h = gelu(h);
    linear(hidden.data(), rows, *w.out_w, *w.out_b, out.data());
    for (size_t i = 0; i < n * d; ++i) x[i] += out[i];
}

void final_norm(const Model& model, const float* x, int rows, float* out) {
    layer_norm(x, rows, model.config.d_model, model.weights.at(tensor_names::kFinalNormWeight),
               model.weights.at(tensor_names::kFinalNormBias), out);
}

std::vector<float> logits_for(const Model& model, const float* normed_row) {
    const auto& wte = model.weights.at(tensor_names::kTokenEmbedding);
    std::vector<float> logits(static_cast<size_t>(model.config.vocab_size));
    Eigen::Map<Eigen::VectorXf> out(logits.data(), model.config.vocab_size);
    out.noalias() = as_matrix(wte) * Eigen::Map<const Eigen::VectorXf>(normed_row, model.config.d_model);
    return logits;
}

double log_sum_exp(const float* row, int n) {
    const float mx = *std::max_element(row, row + n);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    return mx + std::log(sum);
}

void check_ids(const Model& model, std::span<const int> ids) {
    for (int id : ids) {
        if (id < 0 || id >= model.config.vocab_size) throw InvalidInput("token id out of range: " + std::to_string(id));
    }
}

}  // namespace

std::vector<double> log_softmax(std::span<const float> logits) {
    const double lse = log_sum_exp(logits.data(), static_cast<int>(logits.size()));
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
    return out;
}

std::vector<float> attention(std::span<const float> q, std::span<const float> k, std::span<const float> v, int seq_len,
                             int n_heads, int head_dim) {
    const size_t width = static_cast<size_t>(n_heads) * head_dim;
    if (seq_len <= 0 || q.size() != seq_len * width || k.size() != q.size() || v.size() != q.size()) {
        throw InvalidInput("attention inputs must be [seq x n_heads*head_dim]");
    }
    std::vector<float> out(q.size());
    causal_attention(q.data(), static_cast<int>(width), k.data(), v.data(), static_cast<int>(width), seq_len, seq_len, 0,
                     n_heads, head_dim, out.data());
    return out;
}

LayerCheckpoint run_until(const Model& model, std::span<const int> ids, int upto) {
    if (ids.empty()) throw InvalidInput("empty token sequence");
    if (upto < 0 || upto > model.config.n_layers) throw InvalidInput("layer index out of range");
    check_ids(model, ids);
    LayerCheckpoint cp;
    cp.layer = upto;
    cp.seq_len = static_cast<int>(ids.size());
    cp.hidden.resize(ids.size() * model.config.d_model);
    embed(model, ids, {}, 0, cp.hidden.data());
    for (int l = 0; l < upto; ++l) run_block(model, l, cp.hidden.data(), cp.seq_len, 0, nullptr, nullptr);
    return cp;
}

LayerCheckpoint advance(const Model& model, const LayerCheckpoint& from, int upto) {
    if (upto < from.layer || upto > model.config.n_layers) throw InvalidInput("layer index out of range");
    LayerCheckpoint cp = from;
    for (int l = from.layer; l < upto; ++l) run_block(model, l, cp.hidden.data(), cp.seq_len, 0, nullptr, nullptr);
    cp.layer = upto;
    return cp;
}

LogProbTrace resume_logprobs(const Model& model, const LayerCheckpoint& from, std::span<const int> ids,
                             size_t first_scored) {
    const int d = model.config.d_model;
    const int vocab = model.config.vocab_size;
    if (static_cast<int>(ids.size()) != from.seq_len) throw InvalidInput("checkpoint does not match the sequence length");
    if (first_scored < 1 || first_scored > ids.size()) throw InvalidInput("first scored position out of range");
    check_ids(model, ids);

    std::vector<float> x = from.hidden;
    for (int l = from.layer; l < model.config.n_layers; ++l) run_block(model, l, x.data(), from.seq_len, 0, nullptr, nullptr);

    // Row r of the normalised stream predicts ids[r + 1].
    const int first_row = static_cast<int>(first_scored) - 1;
    const int n_rows = from.seq_len - 1 - first_row;
    LogProbTrace trace;
    trace.logprobs.reserve(static_cast<size_t>(std::max(n_rows, 0)));
    if (n_rows <= 0) return trace;
    std::vector<float> normed(static_cast<size_t>(n_rows) * d);
    final_norm(model, x.data() + static_cast<size_t>(first_row) * d, n_rows, normed.data());

    const auto& wte = model.weights.at(tensor_names::kTokenEmbedding);
    constexpr int kBlock = 32;
    RowMatrix logits;
    for (int r0 = 0; r0 < n_rows; r0 += kBlock) {
        const int rows = std::min(kBlock, n_rows - r0);
        logits.noalias() = ConstMatrixMap(normed.data() + static_cast<size_t>(r0) * d, rows, d) * as_matrix(wte).transpose();
        for (int r = 0; r < rows; ++r) {
            const float* row = logits.data() + static_cast<size_t>(r) * vocab;
            const int target = ids[first_row + r0 + r + 1];
            const double lp = static_cast<double>(row[target]) - log_sum_exp(row, vocab);
            trace.logprobs.push_back(lp);
            trace.nll_sum -= lp;
        }
    }
    return trace;
}

LogProbTrace sequence_logprobs(const Model& model, std::span<const int> ids, size_t first_scored) {
    return resume_logprobs(model, run_until(model, ids, 0), ids, first_scored);
}

LogProbTrace forward_logprobs(const Model& model, std::span<const int> tokens) {
    if (tokens.empty()) throw InvalidInput("empty token sequence");
    if (tokens.size() + 1 > static_cast<size_t>(model.config.context_window)) {
        throw InvalidInput("sequence of " + std::to_string(tokens.size()) +
                           " tokens does not fit the context window after the end-of-text prefix");
    }
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(model.config.eos_id());
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    return sequence_logprobs(model, ids, 1);
}

std::vector<float> next_token_logits(const Model& model, std::span<const int> ids) {
    LayerCheckpoint cp = run_until(model, ids, model.config.n_layers);
    const int d = model.config.d_model;
    std::vector<float> normed(d);
    final_norm(model, cp.hidden.data() + static_cast<size_t>(cp.seq_len - 1) * d, 1, normed.data());
    return logits_for(model, normed.data());
}

std::vector<float> lookup_embeddings(const Model& model, std::span<const int> ids) {
    check_ids(model, ids);
    const int d = model.config.d_model;
    const auto& wte = model.weights.at(tensor_names::kTokenEmbedding);
    std::vector<float> out(ids.size() * d);
    for (size_t r = 0; r < ids.size(); ++r) {
        std::copy_n(wte.data.data() + static_cast<size_t>(ids[r]) * d, d, out.data() + r * d);
    }
    return out;
}

std::vector<float> forward_logits_with_embedding_override(const Model& model, std::span<const float> embeddings) {
    const int d = model.config.d_model;
    if (embeddings.empty() || embeddings.size() % d != 0) {
        throw InvalidInput("embedding override must be a non-empty [seq x " + std::to_string(d) + "] matrix");
    }
    const int rows = static_cast<int>(embeddings.size() / d);
    std::vector<float> x(embeddings.size());
    embed(model, {}, embeddings, 0, x.data());
    for (int l = 0; l < model.config.n_layers; ++l) run_block(model, l, x.data(), rows, 0, nullptr, nullptr);
    std::vector<float> normed(d);
    final_norm(model, x.data() + static_cast<size_t>(rows - 1) * d, 1, normed.data());
    return logits_for(model, normed.data());
}

DecoderState::DecoderState(const Model& model)
    : model_(&model), keys_(model.config.n_layers), values_(model.config.n_layers) {}

std::vector<float> DecoderState::append(std::span<const int> ids) {
    if (ids.empty()) throw InvalidInput("append needs at least one token");
    check_ids(*model_, ids);
    const int d = model_->config.d_model;
    const int rows = static_cast<int>(ids.size());
    std::vector<float> x(static_cast<size_t>(rows) * d);
    embed(*model_, ids, {}, length_, x.data());
    for (int l = 0; l < model_->config.n_layers; ++l) {
        run_block(*model_, l, x.data(), rows, length_, &keys_[l], &values_[l]);
    }
    length_ += rows;
    std::vector<float> normed(d);
    final_norm(*model_, x.data() + static_cast<size_t>(rows - 1) * d, 1, normed.data());
    return logits_for(*model_, normed.data());
}

}  // namespace gptd
