#include "gptd/tensor_archive.hpp"

#include "gptd/error.hpp"
#include "gptd/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace gptd {

using nlohmann::json;

Tensor::Tensor(std::vector<int64_t> shape_) : shape(std::move(shape_)) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    data.assign(static_cast<size_t>(n), 0.0f);
}

std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream ss;
    ss << '[';
    for (size_t i = 0; i < shape.size(); ++i) ss << (i ? "x" : "") << shape[i];
    ss << ']';
    return ss.str();
}

const Tensor& TensorArchive::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError(LoadErrorKind::MissingTensor, "missing tensor '" + name + "'");
    return it->second;
}

Tensor& TensorArchive::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw LoadError(LoadErrorKind::MissingTensor, "missing tensor '" + name + "'");
    return it->second;
}

size_t TensorArchive::parameter_count() const {
    size_t n = 0;
    for (const auto& [_, t] : tensors) n += t.numel();
    return n;
}

namespace {

static_assert(std::endian::native == std::endian::little, "safetensors payloads are little-endian");

float half_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000) << 16;
    uint32_t exp = (h >> 10) & 0x1F;
    uint32_t mant = h & 0x3FF;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalise
            exp = 127 - 15 + 1;
            while ((mant & 0x400) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FF;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1F) {
        bits = sign | 0x7F800000u | (mant << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

size_t dtype_size(const std::string& dtype) {
    if (dtype == "F32") return 4;
    if (dtype == "F16" || dtype == "BF16") return 2;
    if (dtype == "F64") return 8;
    return 0;
}

void convert_payload(const std::string& dtype, const uint8_t* src, size_t n, float* dst) {
    if (dtype == "F32") {
        std::memcpy(dst, src, n * 4);
    } else if (dtype == "F16") {
        for (size_t i = 0; i < n; ++i) {
            uint16_t h;
            std::memcpy(&h, src + 2 * i, 2);
            dst[i] = half_to_float(h);
        }
    } else if (dtype == "BF16") {
        for (size_t i = 0; i < n; ++i) {
            uint16_t h;
            std::memcpy(&h, src + 2 * i, 2);
            dst[i] = std::bit_cast<float>(static_cast<uint32_t>(h) << 16);
        }
    } else {  // F64
        for (size_t i = 0; i < n; ++i) {
            double d;
            std::memcpy(&d, src + 8 * i, 8);
            dst[i] = static_cast<float>(d);
        }
    }
}

bool skipped_buffer(const std::string& name) {
    auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    return ends_with(".attn.bias") || ends_with(".attn.masked_bias") || name == "lm_head.weight";
}

std::string canonical_name(const std::string& name) {
    static constexpr std::string_view kPrefix = "transformer.";
    if (name.rfind(kPrefix, 0) == 0) return name.substr(kPrefix.size());
    return name;
}

struct Entry {
    std::string name;
    std::string dtype;
    std::vector<int64_t> shape;
    uint64_t begin = 0, end = 0;
};

struct Header {
    std::vector<Entry> entries;
    std::map<std::string, std::string> metadata;
};

Header parse_header(std::string_view text, uint64_t payload_size) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw LoadError(LoadErrorKind::Corrupt, std::string("safetensors header is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw LoadError(LoadErrorKind::Corrupt, "safetensors header is not an object");
    Header h;
    for (auto& [key, value] : j.items()) {
        if (key == "__metadata__") {
            for (auto& [mk, mv] : value.items()) h.metadata[mk] = mv.is_string() ? mv.get<std::string>() : mv.dump();
            continue;
        }
        Entry e;
        e.name = key;
        try {
            e.dtype = value.at("dtype").get<std::string>();
            e.shape = value.at("shape").get<std::vector<int64_t>>();
            auto offsets = value.at("data_offsets").get<std::vector<uint64_t>>();
            if (offsets.size() != 2) throw LoadError(LoadErrorKind::Corrupt, "bad data_offsets for " + key);
            e.begin = offsets[0];
            e.end = offsets[1];
        } catch (const json::exception& ex) {
            throw LoadError(LoadErrorKind::Corrupt, "malformed entry '" + key + "': " + ex.what());
        }
        uint64_t numel = 1;
        for (auto d : e.shape) {
            if (d < 0) throw LoadError(LoadErrorKind::Corrupt, "negative dimension in " + key);
            numel *= static_cast<uint64_t>(d);
        }
        const size_t width = dtype_size(e.dtype);
        if (width == 0 && !skipped_buffer(canonical_name(key))) {
            throw LoadError(LoadErrorKind::Corrupt, "unsupported dtype " + e.dtype + " for " + key);
        }
        if (e.end < e.begin || e.end > payload_size || (width != 0 && e.end - e.begin != numel * width)) {
            throw LoadError(LoadErrorKind::Corrupt, "data_offsets out of range for " + key);
        }
        h.entries.push_back(std::move(e));
    }
    return h;
}

TensorArchive build(const Header& header, const std::function<void(const Entry&, std::vector<uint8_t>&)>& fetch) {
    TensorArchive archive;
    archive.metadata = header.metadata;
    std::vector<uint8_t> scratch;
    for (const auto& e : header.entries) {
        const std::string name = canonical_name(e.name);
        if (skipped_buffer(name)) continue;
        Tensor t(e.shape);
        fetch(e, scratch);
        convert_payload(e.dtype, scratch.data(), t.numel(), t.data.data());
        archive.tensors.emplace(name, std::move(t));
    }
    return archive;
}

uint64_t read_u64_le(const uint8_t* p) {
    uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
}

}  // namespace

TensorArchive TensorArchive::parse_safetensors(std::span<const uint8_t> bytes) {
    if (bytes.size() < 8) throw LoadError(LoadErrorKind::Corrupt, "safetensors buffer shorter than its length prefix");
    const uint64_t header_len = read_u64_le(bytes.data());
    if (header_len > bytes.size() - 8) throw LoadError(LoadErrorKind::Corrupt, "safetensors header length exceeds file size");
    const std::string_view text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
    const auto payload = bytes.subspan(8 + header_len);
    const Header header = parse_header(text, payload.size());
    return build(header, [&](const Entry& e, std::vector<uint8_t>& buf) {
        buf.assign(payload.begin() + static_cast<std::ptrdiff_t>(e.begin), payload.begin() + static_cast<std::ptrdiff_t>(e.end));
    });
}

TensorArchive TensorArchive::read_safetensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError(LoadErrorKind::Io, "cannot open " + path.string());
    in.seekg(0, std::ios::end);
    const auto file_size = static_cast<uint64_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    uint8_t prefix[8];
    if (file_size < 8 || !in.read(reinterpret_cast<char*>(prefix), 8)) {
        throw LoadError(LoadErrorKind::Corrupt, path.string() + ": too short for a safetensors file");
    }
    const uint64_t header_len = read_u64_le(prefix);
    if (header_len > file_size - 8) throw LoadError(LoadErrorKind::Corrupt, path.string() + ": header length exceeds file size");
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    const uint64_t payload_start = 8 + header_len;
    const Header header = parse_header(text, file_size - payload_start);
    return build(header, [&](const Entry& e, std::vector<uint8_t>& buf) {
        buf.resize(e.end - e.begin);
        in.seekg(static_cast<std::streamoff>(payload_start + e.begin));
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
            throw LoadError(LoadErrorKind::Corrupt, path.string() + ": truncated payload for " + e.name);
        }
    });
}

std::vector<uint8_t> TensorArchive::serialize_safetensors() const {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const uint64_t bytes = t.numel() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::string text = header.dump();
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');

    std::vector<uint8_t> out(8 + text.size() + offset);
    const uint64_t len = text.size();
    std::memcpy(out.data(), &len, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    uint8_t* p = out.data() + 8 + text.size();
    for (const auto& [_, t] : tensors) {
        std::memcpy(p, t.data.data(), t.numel() * 4);
        p += t.numel() * 4;
    }
    return out;
}

void TensorArchive::write_safetensors(const std::filesystem::path& path) const {
    io::write_atomic(path, std::span<const uint8_t>(serialize_safetensors()));
}

}  // namespace gptd
