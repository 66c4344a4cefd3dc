#pragma once

// Runs the gptd executable and captures its exit code and output streams.

#include "gptd/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace gptd::testing {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') {
            q += "'\\''";
        } else {
            q.push_back(c);
        }
    }
    return q + "'";
}

// `env` entries are NAME=VALUE pairs prefixed to the command line.
inline CliResult run_cli(const std::vector<std::string>& args, const std::filesystem::path& scratch,
                         const std::vector<std::string>& env = {}) {
    const auto out_path = scratch / "cli.stdout", err_path = scratch / "cli.stderr";
    std::string cmd = "env";
    for (const auto& e : env) cmd += " " + shell_quote(e);
    cmd += " " + shell_quote(GPTD_CLI_PATH);
    for (const auto& a : args) cmd += " " + shell_quote(a);
    cmd += " >" + shell_quote(out_path.string()) + " 2>" + shell_quote(err_path.string());
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = io::read_text(out_path);
    r.err = io::read_text(err_path);
    return r;
}

}  // namespace gptd::testing
