#include "hvat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <unordered_map>

#include "hvat/io.hpp"
#include "hvat/run_config.hpp"

namespace hvat {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'A', 'T'};
constexpr size_t kMaxNameLen = 4096;
constexpr uint32_t kMaxRank = 8;
constexpr uint64_t kMaxElements = 1ull << 30;

void append_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) { append_u32(out, std::bit_cast<uint32_t>(v)); }

struct Cursor {
    const unsigned char* p;
    size_t len;
    size_t off = 0;

    void need(size_t k, const char* what) const {
        if (off + k > len) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  std::string("checkpoint truncated while reading ") + what);
        }
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    std::string bytes(size_t k, const char* what) {
        need(k, what);
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

struct Entry {
    std::vector<size_t> shape;
    std::vector<float> values;
};

Seq2SeqModel<float> load_impl(const std::string& path, const ModelConfig* expected) {
    const std::string buf = read_file(path);
    Cursor cur{reinterpret_cast<const unsigned char*>(buf.data()), buf.size()};

    const std::string magic = cur.bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "'" + path + "' is not a checkpoint (bad magic)");
    }
    const uint32_t version = cur.u32("format version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointError::Kind::bad_version,
                              "checkpoint format version " + std::to_string(version) +
                                  ", expected " + std::to_string(kCheckpointVersion));
    }
    const uint32_t cfg_len = cur.u32("config length");
    const std::string cfg_text = cur.bytes(cfg_len, "config");
    ModelConfig file_config;
    try {
        file_config = model_config_from_json_string(cfg_text);
        file_config.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError(CheckpointError::Kind::bad_config,
                              std::string("checkpoint config invalid: ") + e.what());
    }

    const uint32_t count = cur.u32("entry count");
    std::unordered_map<std::string, Entry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = cur.u32("name length");
        if (name_len == 0 || name_len > kMaxNameLen) {
            throw CheckpointError(CheckpointError::Kind::bad_config,
                                  "checkpoint entry has implausible name length " +
                                      std::to_string(name_len));
        }
        const std::string name = cur.bytes(name_len, "name");
        const uint32_t rank = cur.u32("rank");
        if (rank == 0 || rank > kMaxRank) {
            throw CheckpointError(CheckpointError::Kind::bad_config,
                                  "entry '" + name + "' has implausible rank " +
                                      std::to_string(rank));
        }
        Entry e;
        uint64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint64_t dim = cur.u64("dims");
            if (dim == 0 || dim > kMaxElements || numel > kMaxElements / dim) {
                throw CheckpointError(CheckpointError::Kind::bad_config,
                                      "entry '" + name + "' has implausible dimensions");
            }
            numel *= dim;
            e.shape.push_back(static_cast<size_t>(dim));
        }
        cur.need(static_cast<size_t>(numel) * 4, "payload");
        e.values.resize(static_cast<size_t>(numel));
        for (uint64_t k = 0; k < numel; ++k) {
            e.values[k] = std::bit_cast<float>(cur.u32("payload"));
        }
        if (!entries.emplace(name, std::move(e)).second) {
            throw CheckpointError(CheckpointError::Kind::unexpected_parameter,
                                  "duplicate entry '" + name + "'");
        }
    }
    if (cur.off != cur.len) {
        throw CheckpointError(CheckpointError::Kind::bad_config,
                              "checkpoint has " + std::to_string(cur.len - cur.off) +
                                  " trailing bytes");
    }

    Seq2SeqModel<float> model = build<float>(expected != nullptr ? *expected : file_config);
    size_t used = 0;
    model.visit_params([&](const std::string& name, ParamCategory, Tensor<float>& t) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            throw CheckpointError(CheckpointError::Kind::missing_parameter,
                                  "checkpoint lacks parameter '" + name + "'");
        }
        if (it->second.shape != t.shape()) {
            throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                                  "parameter '" + name + "' has shape " +
                                      format_shape(it->second.shape) + " in file, expected " +
                                      format_shape(t.shape()));
        }
        std::copy(it->second.values.begin(), it->second.values.end(), t.data());
        ++used;
    });
    if (used != entries.size()) {
        for (const auto& [name, e] : entries) {
            bool found = false;
            model.visit_params([&](const std::string& n, ParamCategory, Tensor<float>&) {
                if (n == name) found = true;
            });
            if (!found) {
                throw CheckpointError(CheckpointError::Kind::unexpected_parameter,
                                      "checkpoint carries unknown parameter '" + name + "'");
            }
        }
    }
    return model;
}

}  // namespace

std::string checkpoint_bytes(Seq2SeqModel<float>& model) {
    std::string out;
    out.append(kMagic, 4);
    append_u32(out, kCheckpointVersion);
    const std::string cfg = model_config_to_json_string(model.config);
    append_u32(out, static_cast<uint32_t>(cfg.size()));
    out += cfg;

    uint32_t count = 0;
    model.visit_params([&](const std::string&, ParamCategory, Tensor<float>&) { ++count; });
    append_u32(out, count);
    model.visit_params([&](const std::string& name, ParamCategory, Tensor<float>& t) {
        append_u32(out, static_cast<uint32_t>(name.size()));
        out += name;
        append_u32(out, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape()) append_u64(out, d);
        for (size_t i = 0; i < t.size(); ++i) append_f32(out, t.data()[i]);
    });
    return out;
}

void save_checkpoint(Seq2SeqModel<float>& model, const std::string& path) {
    write_file_atomic(path, checkpoint_bytes(model));
}

Seq2SeqModel<float> load_checkpoint(const std::string& path) { return load_impl(path, nullptr); }

Seq2SeqModel<float> load_checkpoint(const std::string& path, const ModelConfig& expected) {
    expected.validate();
    return load_impl(path, &expected);
}

}  // namespace hvat
