#pragma once

#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace dattr {

// Worker count: DATTR_WORKERS if set, else the logical core count.
inline int default_workers() {
  if (const char* env = std::getenv("DATTR_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Runs fn(i) for i in [0, n) on a fixed static partition. Results must be
// written to caller-owned, index-addressed slots so the outcome does not
// depend on scheduling. The first exception (by lowest index) is rethrown.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         int workers = default_workers()) {
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t nw = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::pair<std::size_t, std::exception_ptr>> errors(nw, {n, nullptr});
  std::vector<std::thread> threads;
  threads.reserve(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    threads.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += nw) {
        try {
          fn(i);
        } catch (...) {
          if (errors[w].second == nullptr) errors[w] = {i, std::current_exception()};
          return;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  std::size_t best = n;
  std::exception_ptr err = nullptr;
  for (const auto& [idx, e] : errors) {
    if (e != nullptr && idx < best) {
      best = idx;
      err = e;
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace dattr
