#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "plm/core.hpp"

namespace plm {

/// I/O failure; the CLI maps this to exit code 4.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes through a temporary file in the same directory and renames into
/// place, so readers never observe partial files.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
    std::error_code ec;
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw io_error("cannot create directory " + path.parent_path().string());
    }
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out.flush()) throw io_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("cannot move " + tmp.string() + " into place");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace plm
