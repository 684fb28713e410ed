#include "glab/io_util.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace glab {

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void ensure_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (std::filesystem::exists(p)) {
        if (!std::filesystem::is_directory(p)) {
            throw std::runtime_error("ensure_dir: " + path + " exists and is not a directory");
        }
        return;
    }
    std::filesystem::create_directories(p);
}

bool file_exists(const std::string& path) { return std::filesystem::exists(path); }

std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_text_file: cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_text_file: cannot open " + path);
    os << content;
}

}  // namespace glab
