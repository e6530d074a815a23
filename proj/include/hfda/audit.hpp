#pragma once

// Process-wide audit trail of outcome reads and training-stage boundaries.
// Disabled unless a sink is installed; tests install one to check that no
// target outcome is read before the evaluation stage.

#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>

namespace hfda::audit {

using Sink = std::function<void(std::string_view)>;

namespace detail {
inline std::mutex& mutex() {
    static std::mutex m;
    return m;
}
inline Sink& sink() {
    static Sink s;
    return s;
}
} // namespace detail

inline void set_sink(Sink sink) {
    std::lock_guard lock(detail::mutex());
    detail::sink() = std::move(sink);
}

inline void record(std::string_view event) {
    std::lock_guard lock(detail::mutex());
    if (detail::sink()) {
        detail::sink()(event);
    }
}

// RAII sink installation for tests.
class ScopedSink {
public:
    explicit ScopedSink(Sink sink) { set_sink(std::move(sink)); }
    ~ScopedSink() { set_sink({}); }
    ScopedSink(const ScopedSink&) = delete;
    ScopedSink& operator=(const ScopedSink&) = delete;
};

} // namespace hfda::audit
