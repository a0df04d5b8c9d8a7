#ifndef PMG_CORE_HPP
#define PMG_CORE_HPP

#include <array>
#include <atomic>
#include <cassert>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <vector>

namespace pmg {

/// Small fixed-size vector for cell centers, LSF queries and geometry.
template <int Dim>
struct Vec {
  std::array<double, Dim> v{};

  double& operator[](int i) { return v[i]; }
  double operator[](int i) const { return v[i]; }

  Vec operator+(const Vec& o) const {
    Vec r;
    for (int i = 0; i < Dim; ++i) r.v[i] = v[i] + o.v[i];
    return r;
  }
  Vec operator-(const Vec& o) const {
    Vec r;
    for (int i = 0; i < Dim; ++i) r.v[i] = v[i] - o.v[i];
    return r;
  }
  Vec operator*(double s) const {
    Vec r;
    for (int i = 0; i < Dim; ++i) r.v[i] = v[i] * s;
    return r;
  }
  Vec& operator+=(const Vec& o) {
    for (int i = 0; i < Dim; ++i) v[i] += o.v[i];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    for (int i = 0; i < Dim; ++i) v[i] -= o.v[i];
    return *this;
  }
};

template <int Dim>
inline Vec<Dim> operator*(double s, const Vec<Dim>& a) {
  return a * s;
}

template <int Dim>
inline double dot(const Vec<Dim>& a, const Vec<Dim>& b) {
  double s = 0;
  for (int i = 0; i < Dim; ++i) s += a[i] * b[i];
  return s;
}

template <int Dim>
inline double norm(const Vec<Dim>& a) {
  return std::sqrt(dot(a, a));
}

template <int Dim>
using IVec = std::array<int, Dim>;

/// Runtime-checked precondition for user-facing configuration and input.
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// Direction index: 2*axis + 1 points toward +axis, 2*axis toward -axis.
inline constexpr int dir_of(int axis, int side) { return 2 * axis + side; }
inline constexpr int dir_axis(int dir) { return dir / 2; }
inline constexpr int dir_side(int dir) { return dir & 1; }  // 0: -, 1: +
inline constexpr int dir_sign(int dir) { return (dir & 1) ? 1 : -1; }

/// Iterate an index box [lo, hi) with the first axis fastest.
template <int Dim, typename F>
inline void for_box(const IVec<Dim>& lo, const IVec<Dim>& hi, F&& f) {
  IVec<Dim> i{};
  if constexpr (Dim == 2) {
    for (i[1] = lo[1]; i[1] < hi[1]; ++i[1])
      for (i[0] = lo[0]; i[0] < hi[0]; ++i[0]) f(i);
  } else {
    for (i[2] = lo[2]; i[2] < hi[2]; ++i[2])
      for (i[1] = lo[1]; i[1] < hi[1]; ++i[1])
        for (i[0] = lo[0]; i[0] < hi[0]; ++i[0]) f(i);
  }
}

/// Minimal persistent worker pool. run() executes fn(0..n_items-1) and
/// blocks until every item finished. Items must be independent; with
/// n_threads == 1 everything runs on the calling thread, which keeps
/// single-threaded runs trivially reproducible.
class ThreadPool {
 public:
  explicit ThreadPool(int n_threads = 1) { start(n_threads); }

  ~ThreadPool() { stop(); }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  void resize(int n_threads) {
    stop();
    start(n_threads);
  }

  void run(int n_items, const std::function<void(int)>& fn) {
    if (n_items <= 0) return;
    if (workers_.empty() || n_items == 1) {
      for (int i = 0; i < n_items; ++i) fn(i);
      return;
    }
    {
      std::unique_lock<std::mutex> lk(mtx_);
      job_ = &fn;
      n_items_ = n_items;
      next_.store(0, std::memory_order_relaxed);
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    work_loop();  // the calling thread participates
    std::unique_lock<std::mutex> lk(mtx_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  void start(int n_threads) {
    int extra = std::max(0, n_threads - 1);
    quit_ = false;
    for (int i = 0; i < extra; ++i) {
      workers_.emplace_back([this] {
        uint64_t seen = 0;
        for (;;) {
          {
            std::unique_lock<std::mutex> lk(mtx_);
            cv_.wait(lk, [&] { return quit_ || generation_ != seen; });
            if (quit_) return;
            seen = generation_;
          }
          work_loop();
          {
            std::unique_lock<std::mutex> lk(mtx_);
            if (--pending_ == 0) done_cv_.notify_all();
          }
        }
      });
    }
  }

  void stop() {
    {
      std::unique_lock<std::mutex> lk(mtx_);
      quit_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  void work_loop() {
    const auto* fn = job_;
    int n = n_items_;
    for (;;) {
      int i = next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) break;
      (*fn)(i);
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mtx_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int)>* job_ = nullptr;
  std::atomic<int> next_{0};
  int n_items_ = 0;
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool quit_ = false;
};

/// Run fn over [0, n) items, using the pool when given.
inline void parallel_for(ThreadPool* pool, int n,
                         const std::function<void(int)>& fn) {
  if (pool) {
    pool->run(n, fn);
  } else {
    for (int i = 0; i < n; ++i) fn(i);
  }
}

}  // namespace pmg

#endif  // PMG_CORE_HPP
