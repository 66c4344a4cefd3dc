#pragma once

#include "gptd/engine.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gptd {

enum class MaskLocation { EmbeddingRows, AttentionValueColumns };
enum class MaskSelection { FirstFraction, RandomFraction };
// PerHeadFirstHalf: the first floor(p * head_dim) value columns of every head.
// WholeMatrixFirstHalf: the first floor(p * d_model) columns of the whole value block.
enum class ValueScope { PerHead, WholeMatrix };

struct DegradationSpec {
    MaskLocation location = MaskLocation::AttentionValueColumns;
    double proportion = 0.5;
    MaskSelection selection = MaskSelection::FirstFraction;
    std::optional<uint64_t> seed;  // required for RandomFraction
    std::vector<int> layers;       // ignored for EmbeddingRows
    ValueScope value_scope = ValueScope::PerHead;

    // Throws InvalidInput naming the offending field.
    void validate(int n_layers = 12) const;

    nlohmann::json to_json() const;
    static DegradationSpec from_json(const nlohmann::json& j);

    // Copy with a different layer set (pattern search).
    DegradationSpec with_layers(std::vector<int> layers_) const;

    bool operator==(const DegradationSpec&) const = default;
};

std::string to_string(MaskLocation v);
std::string to_string(MaskSelection v);
std::string to_string(ValueScope v);

struct IndexRange {
    int64_t begin = 0;  // inclusive
    int64_t end = 0;    // exclusive
    bool operator==(const IndexRange&) const = default;
};

struct TensorMask {
    std::string tensor;
    bool rows = false;  // true: rows zeroed, false: columns zeroed
    std::vector<IndexRange> ranges;
};

struct MaskReport {
    std::vector<TensorMask> tensors;
    uint64_t parameters_zeroed = 0;

    nlohmann::json to_json() const;
};

// Zero rows/columns chosen by `spec`, on a copy. The source is untouched.
std::pair<Model, MaskReport> degrade(const Model& source, const DegradationSpec& spec);

// The masks `spec` would apply, without touching any weights.
MaskReport plan_mask(const ModelConfig& config, const DegradationSpec& spec);

// In-place apply/restore of a mask on a model that no forward pass is using.
// Saves the overwritten values and puts them back on restore() or destruction.
class MaskSession {
public:
    MaskSession(Model& model, const DegradationSpec& spec);
    ~MaskSession();
    MaskSession(const MaskSession&) = delete;
    MaskSession& operator=(const MaskSession&) = delete;

    const MaskReport& report() const noexcept { return report_; }
    void restore();

private:
    struct Saved {
        Tensor* tensor;
        std::vector<size_t> offsets;
        std::vector<float> values;
    };
    Model* model_;
    MaskReport report_;
    std::vector<Saved> saved_;
    bool active_ = false;
};

enum class PatternStrategy { Individual, Cumulative, Combination };

std::string to_string(PatternStrategy s);
PatternStrategy parse_pattern_strategy(const std::string& s);

using LayerSet = std::vector<int>;

// Individual: {0}..{n-1}. Cumulative: {0}, {0,1}, .., {0..n-1}.
// Combination: all 2^n subsets in bitmask order, starting with the empty set.
std::vector<LayerSet> enumerate_pattern(PatternStrategy strategy, int n_layers = 12);

std::string layer_set_string(const LayerSet& layers);
// Inverse of layer_set_string: "0-8", "0,3,5-7", "none" or "".
LayerSet parse_layer_set(const std::string& text);

}  // namespace gptd
