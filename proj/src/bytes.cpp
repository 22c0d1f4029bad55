#include "dart/bytes.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

namespace dart {

void write_file_atomic(const std::string& path, const std::string& payload) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open " + tmp + " for writing");
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!out) throw DataError("failed writing " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw DataError("failed to move " + tmp + " into place at " + path);
    }
}

std::string read_file_bytes(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + what + " " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace dart
