#include "hvat/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hvat/common.hpp"

namespace hvat {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof()) {
        throw CheckpointError(CheckpointError::Kind::io, "read failed for '" + path + "'");
    }
    return std::move(buf).str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + tmp + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out.good()) {
            throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + tmp + "'");
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw CheckpointError(CheckpointError::Kind::io,
                              "cannot rename '" + tmp + "' to '" + path + "'");
    }
}

}  // namespace hvat
