#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gptd {

inline constexpr const char* kToolkitVersion = "0.1.0";

// What produced a set of output files. `id` hashes the command, config,
// input hashes and version, so reruns with the same inputs share it.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::vector<std::string> outputs;
    std::string version = kToolkitVersion;
    std::string created;  // UTC; SOURCE_DATE_EPOCH when set

    void add_input(const std::filesystem::path& path);
    std::string id() const;
    nlohmann::json to_json() const;
    nlohmann::json reference(const std::filesystem::path& manifest_path) const;
};

std::string utc_timestamp();

// Pretty JSON with a trailing newline.
std::string dump_json(const nlohmann::json& j);

}  // namespace gptd
