#include "gptd/reports.hpp"

#include "gptd/io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>

namespace gptd {

using nlohmann::json;

void RunManifest::add_input(const std::filesystem::path& path) {
    if (!std::filesystem::is_directory(path)) {
        inputs[path.string()] = io::sha256_file(path);
        return;
    }
    // Directory: hash of the sorted (relative path, file hash) list.
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(path)) {
        if (e.is_regular_file()) files.emplace_back(std::filesystem::relative(e.path(), path).string(), io::sha256_file(e.path()));
    }
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& [name, hash] : files) listing += name + "\t" + hash + "\n";
    inputs[path.string()] = io::sha256_hex(listing);
}

std::string RunManifest::id() const {
    const json j = {{"command", command}, {"config", config}, {"inputs", inputs}, {"version", version}};
    return io::sha256_hex(j.dump()).substr(0, 16);
}

json RunManifest::to_json() const {
    return {{"command", command}, {"config", config},   {"inputs", inputs},
            {"outputs", outputs}, {"version", version}, {"created", created}};
}

json RunManifest::reference(const std::filesystem::path& manifest_path) const {
    return {{"manifest", manifest_path.filename().string()}, {"manifest_id", id()}};
}

std::string utc_timestamp() {
    std::time_t t;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    } else {
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

}  // namespace gptd
