#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tiergan {

// Worker pool behind parallel_for. Work items are disjoint index ranges, so
// results are bitwise identical regardless of thread count or scheduling;
// every element is written by exactly one thread and all reductions happen
// inside a single range.
//
// Chunk claims are tagged with a job generation (upper 32 bits of `ticket_`):
// a worker that wakes up late for a finished job sees the generation mismatch
// and walks away instead of stealing chunks from the next job. While any
// chunk of generation g is claimable, run(g) is still blocked, which keeps
// the job closure alive for the worker executing it.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    unsigned thread_count() const { return static_cast<unsigned>(workers_.size()) + 1; }

    // Runs fn(begin, end) over [0, n) split into contiguous chunks. Blocks
    // until every chunk has finished. The calling thread participates.
    // Nested calls from inside a chunk run serially; concurrent top-level
    // calls are serialized.
    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        const unsigned nt = thread_count();
        if (nt <= 1 || n < 2 || in_worker()) {
            fn(0, n);
            return;
        }
        std::unique_lock<std::mutex> run_lock(run_mutex_);
        const std::size_t chunks = std::min<std::size_t>(n, nt);
        std::uint64_t gen;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            gen = ++generation_;
            job_fn_ = &fn;
            job_n_ = n;
            job_chunks_ = chunks;
            pending_.store(static_cast<int>(chunks), std::memory_order_relaxed);
            ticket_.store(gen << 32, std::memory_order_release);
        }
        cv_.notify_all();
        in_worker() = true;
        work_chunks(gen, fn, n, chunks);
        in_worker() = false;
        {
            std::unique_lock<std::mutex> lock(mutex_);
            done_cv_.wait(lock, [this] { return pending_.load(std::memory_order_acquire) == 0; });
            job_fn_ = nullptr;
        }
    }

private:
    ThreadPool() {
        unsigned hw = std::thread::hardware_concurrency();
        if (hw == 0) hw = 1;
        unsigned nt = hw;
        if (const char* env = std::getenv("TIERGAN_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) nt = static_cast<unsigned>(v);
        }
        for (unsigned i = 1; i < nt; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::unique_lock<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    static bool& in_worker() {
        thread_local bool flag = false;
        return flag;
    }

    void worker_loop() {
        in_worker() = true;
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
            std::uint64_t gen = 0;
            std::size_t n = 0, chunks = 0;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = gen = generation_;
                fn = job_fn_;
                n = job_n_;
                chunks = job_chunks_;
            }
            if (fn) work_chunks(gen, *fn, n, chunks);
        }
    }

    void work_chunks(std::uint64_t gen, const std::function<void(std::size_t, std::size_t)>& fn,
                     std::size_t n, std::size_t chunks) {
        for (;;) {
            std::uint64_t cur = ticket_.load(std::memory_order_acquire);
            if ((cur >> 32) != gen) return; // a different job owns the counter
            const std::uint64_t c = cur & 0xffffffffull;
            if (c >= chunks) return; // every chunk claimed
            if (!ticket_.compare_exchange_weak(cur, cur + 1, std::memory_order_acq_rel)) continue;
            const std::size_t begin = static_cast<std::size_t>(c) * n / chunks;
            const std::size_t end = (static_cast<std::size_t>(c) + 1) * n / chunks;
            fn(begin, end);
            if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
                std::unique_lock<std::mutex> lock(mutex_);
                done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex run_mutex_; // serializes top-level run() calls
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(std::size_t, std::size_t)>* job_fn_ = nullptr;
    std::size_t job_n_ = 0, job_chunks_ = 0;
    std::atomic<std::uint64_t> ticket_{0};
    std::atomic<int> pending_{0};
    std::uint64_t generation_ = 0; // guarded by mutex_
    bool stop_ = false;
};

// fn is invoked once per index in [0, n); indices are partitioned into
// contiguous ranges across threads.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
    if (n == 0) return;
    if (n == 1) {
        fn(0);
        return;
    }
    std::function<void(std::size_t, std::size_t)> chunk = [&fn](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) fn(i);
    };
    ThreadPool::instance().run(n, chunk);
}

} // namespace tiergan
