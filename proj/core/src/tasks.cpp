#include "hvat/tasks.hpp"

#include <algorithm>

#include "hvat/common.hpp"
#include "hvat/model.hpp"

namespace hvat {

const char* to_string(TaskKind t) {
    switch (t) {
        case TaskKind::copy: return "copy";
        case TaskKind::reverse: return "reverse";
        case TaskKind::sort: return "sort";
    }
    return "?";
}

TaskKind parse_task(const std::string& s) {
    if (s == "copy") return TaskKind::copy;
    if (s == "reverse") return TaskKind::reverse;
    if (s == "sort") return TaskKind::sort;
    throw ConfigError("unknown task '" + s + "' (expected copy|reverse|sort)");
}

std::vector<SeqPair> generate_task(TaskKind task, uint64_t seed, size_t count, size_t len_lo,
                                   size_t len_hi, size_t vocab_size) {
    if (vocab_size <= static_cast<size_t>(kFirstPayloadId)) {
        throw ConfigError("generate_task: vocab_size must exceed " +
                          std::to_string(kFirstPayloadId) + " (reserved ids), got " +
                          std::to_string(vocab_size));
    }
    if (len_lo < 1 || len_lo > len_hi) {
        throw ConfigError("generate_task: bad length range [" + std::to_string(len_lo) + ", " +
                          std::to_string(len_hi) + "]");
    }
    Rng rng(seed);
    const uint64_t payload_span = static_cast<uint64_t>(vocab_size) - kFirstPayloadId;
    std::vector<SeqPair> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        const size_t len = len_lo + static_cast<size_t>(rng.uniform_int(len_hi - len_lo + 1));
        SeqPair pair;
        pair.src.reserve(len);
        for (size_t j = 0; j < len; ++j) {
            pair.src.push_back(kFirstPayloadId + static_cast<int32_t>(rng.uniform_int(payload_span)));
        }
        pair.tgt = pair.src;
        switch (task) {
            case TaskKind::copy: break;
            case TaskKind::reverse: std::reverse(pair.tgt.begin(), pair.tgt.end()); break;
            case TaskKind::sort: std::sort(pair.tgt.begin(), pair.tgt.end()); break;
        }
        out.push_back(std::move(pair));
    }
    return out;
}

}  // namespace hvat
