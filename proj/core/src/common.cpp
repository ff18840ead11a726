#include "echl/common.hpp"

#include <charconv>
#include <cstdlib>
#include <thread>
#include <vector>

namespace echl {

unsigned num_threads() {
  static unsigned cached = [] {
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (const char* env = std::getenv("ECHL_NUM_THREADS")) {
      char* end = nullptr;
      long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) {
        unsigned cap = static_cast<unsigned>(v);
        return cap < hw ? cap : hw;
      }
    }
    return hw;
  }();
  return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  unsigned workers = num_threads();
  if (n == 0) return;
  if (workers <= 1 || n < 2 * workers) {
    fn(0, n);
    return;
  }
  std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    std::size_t end = begin + chunk < n ? begin + chunk : n;
    pool.emplace_back(fn, begin, end);
  }
  for (auto& t : pool) t.join();
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace echl
