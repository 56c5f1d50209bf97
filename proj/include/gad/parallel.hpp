#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace gad {

// Runs fn(row_begin, row_end) over [0, rows) split into contiguous blocks.
// fn must only gather from shared inputs and write disjoint output rows, so
// results are bitwise identical for any thread count. threads <= 1 (or a
// small grid) runs inline.
template <typename Fn>
void parallel_rows(int rows, int threads, Fn&& fn) {
    threads = std::min(threads, rows / 32);
    if (threads <= 1) {
        fn(0, rows);
        return;
    }
    std::vector<std::thread> workers;
    workers.reserve(threads - 1);
    const int chunk = (rows + threads - 1) / threads;
    for (int t = 1; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(rows, begin + chunk);
        if (begin < end) {
            workers.emplace_back([&fn, begin, end] { fn(begin, end); });
        }
    }
    fn(0, std::min(rows, chunk));
    for (auto& w : workers) {
        w.join();
    }
}

}  // namespace gad
