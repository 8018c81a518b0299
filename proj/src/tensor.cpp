#include "resvit/tensor.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

namespace resvit {

std::string shape_str(const std::vector<i64>& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

namespace {

class Pool {
public:
    static Pool& get() {
        static Pool pool;
        return pool;
    }

    int workers() const { return nworkers_; }

    void run(i64 n, const std::function<void(i64, i64)>& fn) {
        std::unique_lock lk(m_);
        job_ = &fn;
        job_n_ = n;
        next_chunk_ = 0;
        pending_ = nworkers_;
        ++epoch_;
        cv_.notify_all();
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    Pool() {
        nworkers_ = thread_count();
        for (int i = 0; i < nworkers_; ++i)
            threads_.emplace_back([this, i] { worker(i); });
    }

    ~Pool() {
        {
            std::lock_guard lk(m_);
            stop_ = true;
            cv_.notify_all();
        }
        for (auto& t : threads_) t.join();
    }

    void worker(int index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(i64, i64)>* job = nullptr;
            i64 n = 0;
            {
                std::unique_lock lk(m_);
                cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
                if (stop_) return;
                seen = epoch_;
                job = job_;
                n = job_n_;
            }
            // Static partition by worker index keeps chunk boundaries
            // independent of scheduling.
            i64 chunk = (n + nworkers_ - 1) / nworkers_;
            i64 lo = chunk * index;
            i64 hi = std::min(n, lo + chunk);
            if (lo < hi) (*job)(lo, hi);
            {
                std::lock_guard lk(m_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(i64, i64)>* job_ = nullptr;
    i64 job_n_ = 0;
    i64 next_chunk_ = 0;
    int pending_ = 0;
    std::uint64_t epoch_ = 0;
    bool stop_ = false;
    int nworkers_ = 1;
};

}  // namespace

int thread_count() {
    static int n = [] {
        if (const char* env = std::getenv("RESVIT_THREADS")) {
            int k = std::atoi(env);
            if (k >= 1) return k;
        }
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

void parallel_for(i64 n, const std::function<void(i64, i64)>& fn) {
    if (n <= 0) return;
    // Small ranges are cheaper inline than through the pool handshake.
    if (n < 2 || thread_count() == 1) {
        fn(0, n);
        return;
    }
    Pool::get().run(n, fn);
}

}  // namespace resvit
