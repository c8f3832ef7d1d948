#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define VC4D_HAVE_AVX2_FMA 1
#endif

namespace vc4d::kernels {

// Number of threads used to split large inference matvecs. The split is by
// output row, so every element keeps a fixed reduction order and results are
// bit-identical at any thread count.
inline int& inference_threads() {
    static int threads = std::max(1u, std::min(2u, std::thread::hardware_concurrency()));
    return threads;
}

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc0{}, acc1{}, acc2{}, acc3{};
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    T acc = (acc0 + acc1) + (acc2 + acc3);
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

#ifdef VC4D_HAVE_AVX2_FMA
inline float dot(const float* a, const float* b, std::size_t n) {
    __m256 s0 = _mm256_setzero_ps(), s1 = _mm256_setzero_ps();
    __m256 s2 = _mm256_setzero_ps(), s3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
        s1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), s1);
        s2 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 16), _mm256_loadu_ps(b + i + 16), s2);
        s3 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 24), _mm256_loadu_ps(b + i + 24), s3);
    }
    for (; i + 8 <= n; i += 8)
        s0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), s0);
    const __m256 sum = _mm256_add_ps(_mm256_add_ps(s0, s1), _mm256_add_ps(s2, s3));
    float lanes[8];
    _mm256_storeu_ps(lanes, sum);
    float acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}
#endif

namespace detail {

// One persistent helper thread, parked on a condition variable between jobs.
// Decode latency is dominated by streaming the weight matrices; spawning a
// thread per layer would cost more than the overlap saves.
class HelperThread {
public:
    static HelperThread& instance() {
        static HelperThread helper;
        return helper;
    }

    void submit(std::function<void()> job) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            job_ = std::move(job);
            has_job_ = true;
            done_ = false;
        }
        cv_.notify_all();
    }

    void wait() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return done_; });
    }

private:
    HelperThread() : thread_([this] { loop(); }) {}
    ~HelperThread() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            quit_ = true;
        }
        cv_.notify_all();
        thread_.join();
    }

    void loop() {
        std::unique_lock<std::mutex> lock(mutex_);
        for (;;) {
            cv_.wait(lock, [&] { return has_job_ || quit_; });
            if (quit_) return;
            has_job_ = false;
            std::function<void()> job = std::move(job_);
            lock.unlock();
            job();
            lock.lock();
            done_ = true;
            cv_.notify_all();
        }
    }

    std::mutex mutex_;
    std::condition_variable cv_;
    std::function<void()> job_;
    bool has_job_ = false;
    bool done_ = false;
    bool quit_ = false;
    std::thread thread_;
};

}  // namespace detail

// y[o] = dot(W[o, :], x) + bias[o] for o in [0, rows); W row-major [rows x cols].
// Large matrices split their rows between the caller and the helper thread.
template <typename T>
inline void matvec_bias(const T* W, const T* x, const T* bias, T* y,
                        std::size_t rows, std::size_t cols) {
    auto run_rows = [&](std::size_t r0, std::size_t r1) {
        for (std::size_t o = r0; o < r1; ++o)
            y[o] = dot(W + o * cols, x, cols) + (bias ? bias[o] : T{});
    };
    if (inference_threads() <= 1 || rows * cols < (std::size_t{1} << 20) || rows < 2) {
        run_rows(0, rows);
        return;
    }
    const std::size_t mid = rows / 2;
    auto& helper = detail::HelperThread::instance();
    helper.submit([&, mid] { run_rows(0, mid); });
    run_rows(mid, rows);
    helper.wait();
}

}  // namespace vc4d::kernels
