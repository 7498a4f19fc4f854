#include "sfs/kernels.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace sfs::kern {

// ---- thread pool ----

namespace {

thread_local int tl_serial_depth = 0;

class Pool {
public:
    static Pool& instance() {
        static Pool p;
        return p;
    }

    void set_threads(int n) {
        std::lock_guard<std::mutex> lk(config_mu_);
        if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
        if (n < 1) n = 1;
        requested_ = n;
    }

    int threads() {
        std::lock_guard<std::mutex> lk(config_mu_);
        return requested_;
    }

    void run(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
        if (n <= 0) return;
        int nthreads = threads();
        if (nthreads == 1 || n <= grain || tl_serial_depth > 0) {
            fn(0, n);
            return;
        }
        // One pool job at a time; concurrent callers queue up here.
        std::lock_guard<std::mutex> job_lk(job_mu_);
        ensure_workers(nthreads - 1);

        int64_t nchunks = (n + grain - 1) / grain;
        int64_t per_thread_chunks = (nchunks + nthreads - 1) / nthreads;
        // coarsen so each thread gets a handful of chunks for balance
        if (per_thread_chunks > 4) {
            grain = (n + nthreads * 4 - 1) / (nthreads * 4);
            nchunks = (n + grain - 1) / grain;
        }

        std::unique_lock<std::mutex> lk(mu_);
        job_fn_ = &fn;
        job_n_ = n;
        job_grain_ = grain;
        next_chunk_.store(0, std::memory_order_relaxed);
        pending_ = static_cast<int>(workers_.size());
        ++job_id_;
        cv_.notify_all();
        lk.unlock();

        ++tl_serial_depth;  // caller participates; its nested calls run inline
        work(fn, n, grain);
        --tl_serial_depth;

        lk.lock();
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        job_fn_ = nullptr;
    }

private:
    Pool() = default;
    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
            cv_.notify_all();
        }
        for (auto& t : workers_) t.join();
    }

    void ensure_workers(int n) {
        std::lock_guard<std::mutex> lk(mu_);
        while (static_cast<int>(workers_.size()) < n) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t, int64_t)>* fn = nullptr;
            int64_t n = 0, grain = 0;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
                if (stop_) return;
                seen = job_id_;
                fn = job_fn_;
                n = job_n_;
                grain = job_grain_;
            }
            if (fn) {
                ++tl_serial_depth;  // nested parallel_for inside a worker runs inline
                work(*fn, n, grain);
                --tl_serial_depth;
            }
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    void work(const std::function<void(int64_t, int64_t)>& fn, int64_t n, int64_t grain) {
        for (;;) {
            int64_t chunk = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            int64_t begin = chunk * grain;
            if (begin >= n) return;
            int64_t end = begin + grain < n ? begin + grain : n;
            fn(begin, end);
        }
    }

    std::mutex config_mu_;
    int requested_ = static_cast<int>(std::thread::hardware_concurrency());

    std::mutex job_mu_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_n_ = 0, job_grain_ = 0;
    std::atomic<int64_t> next_chunk_{0};
    int pending_ = 0;
    uint64_t job_id_ = 0;
    bool stop_ = false;
};

}  // namespace

void set_max_threads(int n) { Pool::instance().set_threads(n); }
int max_threads() { return Pool::instance().threads(); }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
    Pool::instance().run(n, grain < 1 ? 1 : grain, fn);
}

SerialGuard::SerialGuard() { ++tl_serial_depth; }
SerialGuard::~SerialGuard() { --tl_serial_depth; }

// ---- dispatch ----

namespace {
bool g_force_scalar = false;
}

bool cpu_has_avx2() {
#if defined(SFS_HAVE_AVX2_TU)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

void set_force_scalar(bool on) { g_force_scalar = on; }

bool using_avx2() { return cpu_has_avx2() && !g_force_scalar; }

const char* active_isa_name() { return using_avx2() ? "avx2" : "scalar"; }

#if defined(SFS_HAVE_AVX2_TU)
#define SFS_DISPATCH(fn, ...) \
    if (using_avx2()) return avx2::fn(__VA_ARGS__); \
    return scalar::fn(__VA_ARGS__)
#else
#define SFS_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void gemm_f32(const float* a, const float* b, float* c, int m, int n, int k, bool accumulate) {
    SFS_DISPATCH(gemm_f32, a, b, c, m, n, k, accumulate);
}
void gemm_tn_f32(const float* a, const float* b, float* c, int64_t rows, int m, int n,
                 bool accumulate) {
    SFS_DISPATCH(gemm_tn_f32, a, b, c, rows, m, n, accumulate);
}
void silu_f32(const float* x, float* y, int64_t n) { SFS_DISPATCH(silu_f32, x, y, n); }
void silu_bwd_f32(const float* x, const float* dy, float* dx, int64_t n) {
    SFS_DISPATCH(silu_bwd_f32, x, dy, dx, n);
}
void add_f32(const float* a, const float* b, float* y, int64_t n) {
    SFS_DISPATCH(add_f32, a, b, y, n);
}
void axpy_f32(float alpha, const float* x, float* y, int64_t n) {
    SFS_DISPATCH(axpy_f32, alpha, x, y, n);
}
void scale_f32(float alpha, float* x, int64_t n) { SFS_DISPATCH(scale_f32, alpha, x, n); }
float dot_f32(const float* a, const float* b, int64_t n) { SFS_DISPATCH(dot_f32, a, b, n); }
void adamw_f32(float* w, float* m, float* v, const float* g, int64_t n, float lr, float beta1,
               float beta2, float eps, float weight_decay, float bc1, float bc2) {
    SFS_DISPATCH(adamw_f32, w, m, v, g, n, lr, beta1, beta2, eps, weight_decay, bc1, bc2);
}

}  // namespace sfs::kern
