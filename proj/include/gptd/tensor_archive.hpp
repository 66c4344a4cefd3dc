#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace gptd {

// Dense row-major float32 tensor.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape_);

    size_t numel() const noexcept { return data.size(); }
    int64_t dim(size_t i) const { return shape.at(i); }
    std::span<float> values() noexcept { return data; }
    std::span<const float> values() const noexcept { return data; }

    bool operator==(const Tensor&) const = default;
};

std::string shape_string(const std::vector<int64_t>& shape);

// Named tensors plus free-form string metadata, as stored in a safetensors file.
//
// Reading accepts F32, F16, BF16 and F64 payloads and widens/narrows to
// float32. A leading "transformer." prefix on tensor names is stripped, and
// the non-parameter buffers some GPT-2 exports carry (the causal-mask
// "attn.bias"/"attn.masked_bias" and a tied "lm_head.weight") are skipped.
// Writing always emits F32 with keys in sorted order, so output is a pure
// function of content.
class TensorArchive {
public:
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    size_t parameter_count() const;

    static TensorArchive read_safetensors(const std::filesystem::path& path);
    static TensorArchive parse_safetensors(std::span<const uint8_t> bytes);
    std::vector<uint8_t> serialize_safetensors() const;
    // Atomic: writes a sibling temp file and renames it into place.
    void write_safetensors(const std::filesystem::path& path) const;

    bool operator==(const TensorArchive&) const = default;
};

}  // namespace gptd
