// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace cadrads {

// Shared worker pool for data-parallel loops. Work is split into
// contiguous index ranges; every output element is written by exactly one
// worker with a fixed per-element evaluation order, so results are
// bit-identical for any thread count. Reductions must not be split
// across workers.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    int size() const { return static_cast<int>(workers_.size()) + 1; }

    // fn(begin, end) over [0, n), inclusive-exclusive chunks.
    void run_chunks(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
        if (n <= 0) return;
        const int nt = size();
        if (nt == 1 || n == 1 || inside_job()) {
            // Nested calls degrade to serial execution instead of deadlocking.
            fn(0, n);
            return;
        }
        const std::int64_t chunk = (n + nt - 1) / nt;
        std::atomic<int> pending{0};
        std::mutex m;
        std::condition_variable cv;
        inside_job() = true;
        for (int t = 1; t < nt; ++t) {
            const std::int64_t b = t * chunk;
            const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
            if (b >= e) continue;
            pending.fetch_add(1, std::memory_order_relaxed);
            submit(t - 1, [&, b, e] {
                fn(b, e);
                if (pending.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                    std::lock_guard<std::mutex> lk(m);
                    cv.notify_one();
                }
            });
        }
        fn(0, std::min<std::int64_t>(n, chunk));
        {
            std::unique_lock<std::mutex> lk(m);
            cv.wait(lk, [&] { return pending.load(std::memory_order_acquire) == 0; });
        }
        inside_job() = false;
    }

private:
    ThreadPool() {
        int nt = static_cast<int>(std::thread::hardware_concurrency());
        if (const char* env = std::getenv("CADRADS_THREADS")) {
            int v = std::atoi(env);
            if (v > 0) nt = v;
        }
        if (nt < 1) nt = 1;
        slots_.resize(static_cast<std::size_t>(nt > 1 ? nt - 1 : 0));
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            workers_.emplace_back([this, i] { worker_loop(slots_[i]); });
        }
    }

    ~ThreadPool() {
        for (auto& s : slots_) {
            std::lock_guard<std::mutex> lk(s.m);
            s.stop = true;
            s.cv.notify_one();
        }
        for (auto& w : workers_) w.join();
    }

    struct Slot {
        std::mutex m;
        std::condition_variable cv;
        std::function<void()> job;
        bool stop = false;
    };

    void submit(std::size_t slot, std::function<void()> job) {
        Slot& s = slots_[slot];
        std::unique_lock<std::mutex> lk(s.m);
        s.cv.wait(lk, [&] { return !s.job; });
        s.job = std::move(job);
        s.cv.notify_one();
    }

    static bool& inside_job() {
        thread_local bool flag = false;
        return flag;
    }

    void worker_loop(Slot& s) {
        inside_job() = true;
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lk(s.m);
                s.cv.wait(lk, [&] { return s.stop || s.job; });
                if (s.stop && !s.job) return;
                job = std::move(s.job);
                s.job = nullptr;
                s.cv.notify_one();
            }
            job();
        }
    }

    // deque: slots are neither movable nor copyable and must not relocate
    std::deque<Slot> slots_;
    std::vector<std::thread> workers_;
};

inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
    ThreadPool::instance().run_chunks(n, fn);
}

}  // namespace cadrads
