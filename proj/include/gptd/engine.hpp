#pragma once

#include "gptd/tensor_archive.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gptd {

struct ModelConfig {
    int n_layers = 12;
    int n_heads = 12;
    int d_model = 768;
    int vocab_size = 50257;
    int context_window = 1024;

    int head_dim() const noexcept { return d_model / n_heads; }
    int d_ff() const noexcept { return 4 * d_model; }
    // End-of-text is the last vocabulary entry, as in GPT-2.
    int eos_id() const noexcept { return vocab_size - 1; }

    static ModelConfig gpt2_small() { return {}; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Canonical tensor names (Hugging Face GPT-2 layout, Conv1D weights stored in x out).
namespace tensor_names {
inline constexpr const char* kTokenEmbedding = "wte.weight";
inline constexpr const char* kPositionEmbedding = "wpe.weight";
inline constexpr const char* kFinalNormWeight = "ln_f.weight";
inline constexpr const char* kFinalNormBias = "ln_f.bias";
std::string layer(int index, const char* suffix);
inline std::string qkv_weight(int l) { return layer(l, "attn.c_attn.weight"); }
inline std::string qkv_bias(int l) { return layer(l, "attn.c_attn.bias"); }
}  // namespace tensor_names

// Every tensor the forward pass reads, with its expected shape.
std::vector<std::pair<std::string, std::vector<int64_t>>> expected_tensors(const ModelConfig& config);

// Throws LoadError (MissingTensor / ShapeMismatch / NonFinite) on the first violation.
void validate_weights(const TensorArchive& archive, const ModelConfig& config);

// Reads the architecture from archive shapes; n_heads comes from metadata "n_head"
// when present, otherwise head_dim 64 is assumed.
ModelConfig infer_config(const TensorArchive& archive);

TensorArchive load_weights(const std::filesystem::path& path, const ModelConfig& config);

// Architecture plus validated weights. Forward passes only read it, so one
// instance may be shared by any number of concurrent passes.
struct Model {
    ModelConfig config;
    TensorArchive weights;

    Model() = default;
    Model(ModelConfig config_, TensorArchive weights_);

    static Model load(const std::filesystem::path& path);
    static Model load(const std::filesystem::path& path, const ModelConfig& config);
};

struct LogProbTrace {
    std::vector<double> logprobs;  // log p(token_i | tokens_<i), one per scored position
    double nll_sum = 0.0;

    size_t size() const noexcept { return logprobs.size(); }
};

// Causal multi-head attention over already-projected inputs.
// q, k, v: [seq x (n_heads * head_dim)] row-major. Returns [seq x (n_heads * head_dim)]
// before the output projection.
std::vector<float> attention(std::span<const float> q, std::span<const float> k, std::span<const float> v,
                             int seq_len, int n_heads, int head_dim);

// Prepends end-of-text and scores every supplied token.
// Requires 1 <= tokens.size() <= context_window - 1.
LogProbTrace forward_logprobs(const Model& model, std::span<const int> tokens);

// Scores ids[first_scored..] given everything before them; ids is used verbatim.
LogProbTrace sequence_logprobs(const Model& model, std::span<const int> ids, size_t first_scored = 1);

// Logits for the token following ids.
std::vector<float> next_token_logits(const Model& model, std::span<const int> ids);

// Final-position logits from caller-supplied token embeddings [seq x d_model];
// positional embeddings are still added.
std::vector<float> forward_logits_with_embedding_override(const Model& model, std::span<const float> embeddings);

struct EmbeddingGradient {
    float logit = 0.0f;
    std::vector<float> grad;  // d logit[target] / d embeddings, [seq x d_model]
};

// Reverse-mode gradient of the final-position logit of `target` with respect to
// the supplied token embeddings.
EmbeddingGradient logit_gradient_wrt_embeddings(const Model& model, std::span<const float> embeddings, int target);

// Token-embedding rows for ids, [seq x d_model].
std::vector<float> lookup_embeddings(const Model& model, std::span<const int> ids);

// Residual stream of every position at the boundary between layers.
// Lets callers resume a forward pass above layers they know are unchanged.
struct LayerCheckpoint {
    int layer = 0;              // index of the first layer still to run
    int seq_len = 0;
    std::vector<float> hidden;  // [seq x d_model]
};

// Runs the embedding and layers [0, upto) and returns the residual stream.
LayerCheckpoint run_until(const Model& model, std::span<const int> ids, int upto);
// Runs layers [from.layer, upto) on a copy of the checkpoint.
LayerCheckpoint advance(const Model& model, const LayerCheckpoint& from, int upto);
// Resumes from a checkpoint (which must come from identical weights for the
// layers below it) and scores ids[first_scored..].
LogProbTrace resume_logprobs(const Model& model, const LayerCheckpoint& from, std::span<const int> ids,
                             size_t first_scored = 1);

// Incremental decoding with a key/value cache. Copyable, so beams can fork.
class DecoderState {
public:
    explicit DecoderState(const Model& model);

    // Appends tokens and returns logits for the position after the last one.
    std::vector<float> append(std::span<const int> ids);
    int length() const noexcept { return length_; }

private:
    const Model* model_;
    int length_ = 0;
    std::vector<std::vector<float>> keys_;    // per layer, [length x d_model]
    std::vector<std::vector<float>> values_;  // per layer, [length x d_model]
};

// log-softmax of a logit row, accumulated in double.
std::vector<double> log_softmax(std::span<const float> logits);

}  // namespace gptd
