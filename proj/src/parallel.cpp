#include "nytune/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace nytune {

namespace {

int initial_threads() {
  int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("NYTUNE_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return std::min(v, hw);
  }
  return hw;
}

std::atomic<int> g_threads{initial_threads()};

}  // namespace

int num_threads() { return g_threads.load(); }

void set_num_threads(int t) { g_threads.store(std::max(1, t)); }

void parallel_blocks(Index nblocks, const std::function<void(Index)>& fn) {
  int nt = static_cast<int>(std::min<Index>(num_threads(), nblocks));
  if (nt <= 1) {
    for (Index b = 0; b < nblocks; ++b) fn(b);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (int i = 0; i < nt; ++i) {
    pool.emplace_back([&] {
      for (Index b = next++; b < nblocks; b = next++) fn(b);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace nytune
