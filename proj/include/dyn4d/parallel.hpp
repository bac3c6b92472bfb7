#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace dyn4d {

/// Runs fn(i) for i in [0, n) on up to `threads` workers using a fixed
/// contiguous partition. Work items must write to disjoint outputs; the first
/// exception thrown by any worker is rethrown on the calling thread.
template <class Fn>
void parallel_for(int n, int threads, Fn &&fn) {
    threads = std::clamp(threads, 1, std::max(n, 1));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    {
        std::vector<std::jthread> workers;
        workers.reserve(threads);
        for (int w = 0; w < threads; ++w) {
            const int begin = n * w / threads;
            const int end = n * (w + 1) / threads;
            workers.emplace_back([&, w, begin, end] {
                try {
                    for (int i = begin; i < end; ++i) {
                        fn(i);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace dyn4d
