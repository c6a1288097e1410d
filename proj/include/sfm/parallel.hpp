#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sfm {

// Persistent worker pool. parallel_for hands out indices one at a time through
// an atomic counter; tasks must write only to disjoint output regions, which
// makes every result independent of the worker count.
class ThreadPool {
public:
    explicit ThreadPool(int workers);
    ~ThreadPool();

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int workers() const { return static_cast<int>(threads_.size()) + 1; }

    // Runs fn(i) for i in [0, n). Blocks until all indices are done.
    // The calling thread participates.
    void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

private:
    void worker_loop();

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    const std::function<void(int64_t)>* job_ = nullptr;
    std::atomic<int64_t> next_{0};
    int64_t job_size_ = 0;
    int active_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

// Global pool, sized from SFMAMBA_WORKERS (falling back to
// hardware_concurrency) until set_global_workers overrides it.
ThreadPool& global_pool();
void set_global_workers(int workers);
int global_workers();

}  // namespace sfm
