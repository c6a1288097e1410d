#include "sfm/parallel.hpp"

#include <cstdlib>
#include <memory>
#include <stdexcept>

namespace sfm {

ThreadPool::ThreadPool(int workers) {
    if (workers < 1) workers = 1;
    threads_.reserve(static_cast<size_t>(workers - 1));
    for (int i = 0; i < workers - 1; ++i) {
        threads_.emplace_back([this] { worker_loop(); });
    }
}

ThreadPool::~ThreadPool() {
    {
        std::unique_lock<std::mutex> lk(mu_);
        stop_ = true;
    }
    cv_start_.notify_all();
    for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop() {
    uint64_t seen = 0;
    for (;;) {
        {
            std::unique_lock<std::mutex> lk(mu_);
            cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
            if (stop_) return;
            seen = generation_;
        }
        const auto* job = job_;
        const int64_t n = job_size_;
        for (;;) {
            int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
            if (i >= n) break;
            (*job)(i);
        }
        {
            std::unique_lock<std::mutex> lk(mu_);
            if (--active_ == 0) cv_done_.notify_all();
        }
    }
}

void ThreadPool::parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
    if (n <= 0) return;
    if (threads_.empty() || n == 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    {
        std::unique_lock<std::mutex> lk(mu_);
        job_ = &fn;
        job_size_ = n;
        next_.store(0, std::memory_order_relaxed);
        active_ = static_cast<int>(threads_.size());
        ++generation_;
    }
    cv_start_.notify_all();
    // calling thread pulls indices too
    for (;;) {
        int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) break;
        fn(i);
    }
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [&] { return active_ == 0; });
    job_ = nullptr;
}

namespace {

int env_default_workers() {
    if (const char* env = std::getenv("SFMAMBA_WORKERS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

std::unique_ptr<ThreadPool> g_pool;
int g_workers = 0;

}  // namespace

ThreadPool& global_pool() {
    if (!g_pool) {
        g_workers = env_default_workers();
        g_pool = std::make_unique<ThreadPool>(g_workers);
    }
    return *g_pool;
}

void set_global_workers(int workers) {
    if (workers < 1) throw std::invalid_argument("worker count must be >= 1");
    if (g_pool && g_workers == workers) return;
    g_pool.reset();
    g_workers = workers;
    g_pool = std::make_unique<ThreadPool>(workers);
}

int global_workers() {
    global_pool();
    return g_workers;
}

}  // namespace sfm
