#include "emodir/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace emodir {

int max_threads() {
    static const int cached = [] {
        int n = int(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        if (const char* env = std::getenv("EMODIR_THREADS")) {
            int cap = std::atoi(env);
            if (cap >= 1 && cap < n) n = cap;
        }
        return n;
    }();
    return cached;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(max_threads(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace emodir
