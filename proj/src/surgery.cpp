#include "gptd/surgery.hpp"

#include "gptd/error.hpp"
#include "gptd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace gptd {

using nlohmann::json;

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
    std::vector<int64_t> pool(static_cast<size_t>(n));
    std::iota(pool.begin(), pool.end(), int64_t{0});
    for (int64_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<int64_t>(below(static_cast<uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(static_cast<size_t>(k));
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::string to_string(MaskLocation v) {
    return v == MaskLocation::EmbeddingRows ? "embedding_rows" : "attention_value_columns";
}
std::string to_string(MaskSelection v) { return v == MaskSelection::FirstFraction ? "first" : "random"; }
std::string to_string(ValueScope v) { return v == ValueScope::PerHead ? "per_head" : "whole_matrix"; }

void DegradationSpec::validate(int n_layers) const {
    if (!(proportion > 0.0 && proportion <= 1.0)) {
        throw InvalidInput("proportion must be in (0, 1], got " + std::to_string(proportion));
    }
    if (selection == MaskSelection::RandomFraction && !seed) {
        throw InvalidInput("seed is required when selection is random");
    }
    if (location == MaskLocation::AttentionValueColumns) {
        std::set<int> seen;
        for (int l : layers) {
            if (l < 0 || l >= n_layers) {
                throw InvalidInput("layers: index " + std::to_string(l) + " outside 0.." + std::to_string(n_layers - 1));
            }
            if (!seen.insert(l).second) throw InvalidInput("layers: duplicate index " + std::to_string(l));
        }
    }
}

DegradationSpec DegradationSpec::with_layers(std::vector<int> layers_) const {
    DegradationSpec s = *this;
    s.layers = std::move(layers_);
    return s;
}

json DegradationSpec::to_json() const {
    json j = {{"location", to_string(location)},
              {"proportion", proportion},
              {"selection", to_string(selection)},
              {"layers", layers},
              {"value_scope", to_string(value_scope)}};
    j["seed"] = seed ? json(*seed) : json(nullptr);
    return j;
}

DegradationSpec DegradationSpec::from_json(const json& j) {
    DegradationSpec s;
    try {
        const auto loc = j.value("location", std::string("attention_value_columns"));
        if (loc == "embedding_rows") {
            s.location = MaskLocation::EmbeddingRows;
        } else if (loc == "attention_value_columns") {
            s.location = MaskLocation::AttentionValueColumns;
        } else {
            throw InvalidInput("location: unknown value '" + loc + "'");
        }
        s.proportion = j.value("proportion", 0.5);
        const auto sel = j.value("selection", std::string("first"));
        if (sel == "first") {
            s.selection = MaskSelection::FirstFraction;
        } else if (sel == "random") {
            s.selection = MaskSelection::RandomFraction;
        } else {
            throw InvalidInput("selection: unknown value '" + sel + "'");
        }
        if (j.contains("seed") && !j["seed"].is_null()) s.seed = j["seed"].get<uint64_t>();
        if (j.contains("layers")) s.layers = j["layers"].get<std::vector<int>>();
        const auto scope = j.value("value_scope", std::string("per_head"));
        if (scope == "per_head") {
            s.value_scope = ValueScope::PerHead;
        } else if (scope == "whole_matrix") {
            s.value_scope = ValueScope::WholeMatrix;
        } else {
            throw InvalidInput("value_scope: unknown value '" + scope + "'");
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("degradation spec: ") + e.what());
    }
    return s;
}

json MaskReport::to_json() const {
    json arr = json::array();
    for (const auto& t : tensors) {
        json ranges = json::array();
        for (const auto& r : t.ranges) ranges.push_back({r.begin, r.end});
        arr.push_back({{"tensor", t.tensor}, {"axis", t.rows ? "rows" : "columns"}, {"ranges", ranges}});
    }
    return {{"tensors", arr}, {"parameters_zeroed", parameters_zeroed}};
}

namespace {

int64_t masked_count(double proportion, int64_t dim) {
    // floor; the epsilon keeps e.g. 0.29 * 100 from landing on 28.999...
    return std::min<int64_t>(dim, static_cast<int64_t>(std::floor(proportion * static_cast<double>(dim) + 1e-9)));
}

std::vector<IndexRange> to_ranges(const std::vector<int64_t>& sorted, int64_t base) {
    std::vector<IndexRange> out;
    for (int64_t idx : sorted) {
        if (!out.empty() && out.back().end == idx + base) {
            ++out.back().end;
        } else {
            out.push_back({idx + base, idx + base + 1});
        }
    }
    return out;
}

std::vector<int64_t> choose(const DegradationSpec& spec, int64_t dim, int64_t k, uint64_t stream) {
    if (spec.selection == MaskSelection::FirstFraction) {
        std::vector<int64_t> v(static_cast<size_t>(k));
        std::iota(v.begin(), v.end(), int64_t{0});
        return v;
    }
    Rng rng = Rng::derive(*spec.seed, stream);
    return rng.sample_without_replacement(dim, k);
}

uint64_t range_total(const std::vector<IndexRange>& ranges) {
    uint64_t n = 0;
    for (const auto& r : ranges) n += static_cast<uint64_t>(r.end - r.begin);
    return n;
}

}  // namespace

MaskReport plan_mask(const ModelConfig& config, const DegradationSpec& spec) {
    spec.validate(config.n_layers);
    MaskReport report;
    const int64_t d = config.d_model;
    if (spec.location == MaskLocation::EmbeddingRows) {
        const int64_t k = masked_count(spec.proportion, config.vocab_size);
        TensorMask m{tensor_names::kTokenEmbedding, true, to_ranges(choose(spec, config.vocab_size, k, 0), 0)};
        report.parameters_zeroed = range_total(m.ranges) * static_cast<uint64_t>(d);
        report.tensors.push_back(std::move(m));
        return report;
    }
    std::vector<int> layers = spec.layers;
    std::sort(layers.begin(), layers.end());
    const int64_t value_base = 2 * d;  // V is the last third of the fused projection
    for (int l : layers) {
        TensorMask m{tensor_names::qkv_weight(l), false, {}};
        if (spec.value_scope == ValueScope::PerHead) {
            const int64_t hd = config.head_dim();
            const int64_t k = masked_count(spec.proportion, hd);
            for (int h = 0; h < config.n_heads; ++h) {
                auto cols = choose(spec, hd, k, static_cast<uint64_t>(l) * 1000 + h + 1);
                auto r = to_ranges(cols, value_base + h * hd);
                m.ranges.insert(m.ranges.end(), r.begin(), r.end());
            }
        } else {
            const int64_t k = masked_count(spec.proportion, d);
            m.ranges = to_ranges(choose(spec, d, k, static_cast<uint64_t>(l) * 1000 + 1), value_base);
        }
        report.parameters_zeroed += range_total(m.ranges) * static_cast<uint64_t>(d);
        report.tensors.push_back(std::move(m));
    }
    return report;
}

namespace {

// Flat offsets of every element the mask covers.
std::vector<size_t> mask_offsets(const Tensor& t, const TensorMask& m) {
    std::vector<size_t> out;
    const auto cols = static_cast<size_t>(t.shape.at(1));
    if (m.rows) {
        for (const auto& r : m.ranges) {
            for (int64_t row = r.begin; row < r.end; ++row) {
                for (size_t c = 0; c < cols; ++c) out.push_back(static_cast<size_t>(row) * cols + c);
            }
        }
    } else {
        const auto rows = static_cast<size_t>(t.shape.at(0));
        for (size_t row = 0; row < rows; ++row) {
            for (const auto& r : m.ranges) {
                for (int64_t c = r.begin; c < r.end; ++c) out.push_back(row * cols + static_cast<size_t>(c));
            }
        }
    }
    return out;
}

}  // namespace

std::pair<Model, MaskReport> degrade(const Model& source, const DegradationSpec& spec) {
    MaskReport report = plan_mask(source.config, spec);
    Model out = source;
    for (const auto& m : report.tensors) {
        Tensor& t = out.weights.at(m.tensor);
        for (size_t off : mask_offsets(t, m)) t.data[off] = 0.0f;
    }
    return {std::move(out), std::move(report)};
}

MaskSession::MaskSession(Model& model, const DegradationSpec& spec)
    : model_(&model), report_(plan_mask(model.config, spec)) {
    for (const auto& m : report_.tensors) {
        Saved s{&model_->weights.at(m.tensor), {}, {}};
        s.offsets = mask_offsets(*s.tensor, m);
        s.values.reserve(s.offsets.size());
        for (size_t off : s.offsets) {
            s.values.push_back(s.tensor->data[off]);
            s.tensor->data[off] = 0.0f;
        }
        saved_.push_back(std::move(s));
    }
    active_ = true;
}

MaskSession::~MaskSession() { restore(); }

void MaskSession::restore() {
    if (!active_) return;
    for (auto it = saved_.rbegin(); it != saved_.rend(); ++it) {
        for (size_t i = 0; i < it->offsets.size(); ++i) it->tensor->data[it->offsets[i]] = it->values[i];
    }
    saved_.clear();
    active_ = false;
}

std::string to_string(PatternStrategy s) {
    switch (s) {
        case PatternStrategy::Individual: return "individual";
        case PatternStrategy::Cumulative: return "cumulative";
        case PatternStrategy::Combination: return "combination";
    }
    return "?";
}

PatternStrategy parse_pattern_strategy(const std::string& s) {
    if (s == "individual") return PatternStrategy::Individual;
    if (s == "cumulative") return PatternStrategy::Cumulative;
    if (s == "combination") return PatternStrategy::Combination;
    throw InvalidInput("strategy must be individual, cumulative or combination, got '" + s + "'");
}

std::vector<LayerSet> enumerate_pattern(PatternStrategy strategy, int n_layers) {
    std::vector<LayerSet> out;
    switch (strategy) {
        case PatternStrategy::Individual:
            for (int l = 0; l < n_layers; ++l) out.push_back({l});
            break;
        case PatternStrategy::Cumulative:
            for (int l = 0; l < n_layers; ++l) {
                LayerSet s(static_cast<size_t>(l + 1));
                std::iota(s.begin(), s.end(), 0);
                out.push_back(std::move(s));
            }
            break;
        case PatternStrategy::Combination:
            if (n_layers > 20) throw InvalidInput("combination search over more than 20 layers is not supported");
            for (uint32_t mask = 0; mask < (1u << n_layers); ++mask) {
                LayerSet s;
                for (int l = 0; l < n_layers; ++l) {
                    if (mask & (1u << l)) s.push_back(l);
                }
                out.push_back(std::move(s));
            }
            break;
    }
    return out;
}

std::string layer_set_string(const LayerSet& layers) {
    if (layers.empty()) return "none";
    std::ostringstream ss;
    size_t i = 0;
    bool first = true;
    while (i < layers.size()) {
        size_t j = i;
        while (j + 1 < layers.size() && layers[j + 1] == layers[j] + 1) ++j;
        ss << (first ? "" : ",") << layers[i];
        if (j > i) ss << '-' << layers[j];
        first = false;
        i = j + 1;
    }
    return ss.str();
}

LayerSet parse_layer_set(const std::string& text) {
    LayerSet out;
    if (text.empty() || text == "none") return out;
    std::istringstream in(text);
    std::string part;
    auto number = [&](const std::string& s) {
        size_t used = 0;
        int v = -1;
        try {
            v = std::stoi(s, &used);
        } catch (const std::logic_error&) {
            used = 0;
        }
        if (used != s.size() || v < 0) throw InvalidInput("layers: cannot parse '" + text + "'");
        return v;
    };
    while (std::getline(in, part, ',')) {
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
            out.push_back(number(part));
        } else {
            const int a = number(part.substr(0, dash));
            const int b = number(part.substr(dash + 1));
            if (b < a) throw InvalidInput("layers: descending range '" + part + "'");
            for (int l = a; l <= b; ++l) out.push_back(l);
        }
    }
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw InvalidInput("layers: duplicate index in '" + text + "'");
    return out;
}

}  // namespace gptd
