#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hvat {

enum class TaskKind { copy, reverse, sort };

const char* to_string(TaskKind t);
TaskKind parse_task(const std::string& s);

struct SeqPair {
    std::vector<int32_t> src;
    std::vector<int32_t> tgt;
};

/// Synthetic seq2seq pairs: copy (tgt == src), reverse, or ascending sort.
/// Payload tokens are uniform over [3, vocab_size) — ids 0/1/2 stay reserved
/// for pad/bos/eos. Deterministic given seed.
std::vector<SeqPair> generate_task(TaskKind task, uint64_t seed, size_t count, size_t len_lo,
                                   size_t len_hi, size_t vocab_size);

}  // namespace hvat
