#pragma once

#include <cstdint>

namespace hvat {

// Operation cost accounting used by the complexity report and its
// instrumentation oracle. Conventions (every closed-form estimate uses the
// same table, so the two sides must agree exactly):
//   - matmul [..,p,q]x[q,r]: 2*B*p*q*r (one multiply + one accumulate each)
//   - elementwise add/mul/scale: 1 per output element
//   - relu: 1 per element; sigmoid and exp-family activations: 1 per element
//   - softmax / log_softmax: 3 per element (exp, sum share, divide)
//   - mean over an axis: input size + output size
//   - sum: input size
//   - layer_norm: 7 per element
//   - concat / slice / transpose / reshape / embedding lookup: 0 (data movement)
class FlopCounter {
public:
    void add(uint64_t ops) { total_ += ops; }
    uint64_t total() const { return total_; }
    void reset() { total_ = 0; }

private:
    uint64_t total_ = 0;
};

namespace detail {
inline thread_local FlopCounter* g_active_flop_counter = nullptr;
}

inline void record_flops(uint64_t ops) {
    if (detail::g_active_flop_counter) detail::g_active_flop_counter->add(ops);
}

/// Routes op costs into `counter` for the lifetime of the scope (per thread).
class FlopScope {
public:
    explicit FlopScope(FlopCounter& counter) : previous_(detail::g_active_flop_counter) {
        detail::g_active_flop_counter = &counter;
    }
    ~FlopScope() { detail::g_active_flop_counter = previous_; }
    FlopScope(const FlopScope&) = delete;
    FlopScope& operator=(const FlopScope&) = delete;

private:
    FlopCounter* previous_;
};

}  // namespace hvat
