#include "attnseg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace attnseg {

namespace {

std::atomic<int> g_override{0};

int env_workers() {
    const char* env = std::getenv("ATTNSEG_THREADS");
    if (env == nullptr || *env == '\0') return 0;
    try {
        return std::max(0, std::stoi(env));
    } catch (const std::exception&) {
        return 0;
    }
}

}  // namespace

int worker_count() {
    int n = g_override.load();
    if (n <= 0) n = env_workers();
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    return std::max(1, n);
}

void set_worker_count(int workers) { g_override.store(std::max(0, workers)); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
    const std::size_t workers =
        std::min<std::size_t>(count, static_cast<std::size_t>(worker_count()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    threads.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace attnseg
