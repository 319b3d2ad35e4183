#ifndef GRFOPT_PARALLEL_HPP
#define GRFOPT_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace grfopt {

/**
 * Runs body(i) for i in [0, count) on up to `threads` workers using
 * contiguous blocks. Results must be written to per-index slots; any
 * reduction happens afterwards in index order. If several indices throw,
 * the exception from the smallest index is rethrown.
 */
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::mutex mutex;
  std::size_t failed_index = count;
  std::exception_ptr failure;
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t block = (count + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * block;
      const std::size_t end = std::min(count, begin + block);
      if (begin < end) pool.emplace_back(worker, begin, end);
    }
  }
  if (failure) std::rethrow_exception(failure);
}

} // namespace grfopt

#endif // GRFOPT_PARALLEL_HPP
