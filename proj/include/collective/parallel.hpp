#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace collective::detail {

/// Runs body(i) for i in [0, n) on up to `threads` workers with a fixed
/// round-robin assignment. Results must be written to slot i by the caller,
/// so the merged output never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, int threads, F body) {
    const int nt = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (nt <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(nt)) body(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace collective::detail
