#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace pat {

// Static-partition fork/join pool. Each index is computed by exactly one
// worker into disjoint outputs, so results are bit-identical for any thread
// count. Thread count comes from PAT_THREADS, else hardware concurrency.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int num_threads() const { return int(workers_.size()) + 1; }

    // Runs fn(i) for i in [0, n). Blocks until complete.
    void run(int n, const std::function<void(int)>& fn) {
        if (n <= 0) return;
        bool expected = false;
        const bool parallel = n > 1 && num_threads() > 1 &&
                              active_.compare_exchange_strong(expected, true);
        if (!parallel) {
            // Nested or serial: run inline.
            for (int i = 0; i < n; ++i) fn(i);
            return;
        }
        {
            std::unique_lock<std::mutex> lock(mu_);
            job_fn_ = &fn;
            job_n_ = n;
            job_next_.store(0);
            pending_ = int(workers_.size());
            ++generation_;
        }
        cv_start_.notify_all();
        work_loop();
        {
            std::unique_lock<std::mutex> lock(mu_);
            cv_done_.wait(lock, [&] { return pending_ == 0; });
            job_fn_ = nullptr;
        }
        active_.store(false);
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mu_);
            stop_ = true;
            ++generation_;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
    }

private:
    ThreadPool() {
        int n = 0;
        if (const char* env = std::getenv("PAT_THREADS")) {
            n = std::atoi(env);
        }
        if (n <= 0) n = int(std::thread::hardware_concurrency());
        if (n <= 0) n = 1;
        for (int i = 0; i + 1 < n; ++i) {
            workers_.emplace_back([this] { worker_main(); });
        }
    }

    void worker_main() {
        std::uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lock(mu_);
                cv_start_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
            }
            work_loop();
            {
                std::unique_lock<std::mutex> lock(mu_);
                if (--pending_ == 0) cv_done_.notify_one();
            }
        }
    }

    void work_loop() {
        const auto* fn = job_fn_;
        const int n = job_n_;
        if (!fn) return;
        for (;;) {
            const int i = job_next_.fetch_add(1);
            if (i >= n) break;
            (*fn)(i);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_start_;
    std::condition_variable cv_done_;
    const std::function<void(int)>* job_fn_ = nullptr;
    int job_n_ = 0;
    std::atomic<int> job_next_{0};
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    std::atomic<bool> active_{false};
};

inline void parallel_for(int n, const std::function<void(int)>& fn) {
    ThreadPool::instance().run(n, fn);
}

// Skips pool dispatch for small jobs where spawn overhead dominates.
inline void parallel_for_if(bool big_enough, int n, const std::function<void(int)>& fn) {
    if (big_enough) {
        parallel_for(n, fn);
    } else {
        for (int i = 0; i < n; ++i) fn(i);
    }
}

} // namespace pat
