// Peak heap usage of the gradient engine, measured by interposing the C allocator.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "test_util.hpp"

#include <malloc.h>

#include <atomic>
#include <cstdlib>

extern "C" {
void* __libc_malloc(size_t);
void* __libc_calloc(size_t, size_t);
void* __libc_realloc(void*, size_t);
void __libc_free(void*);
void* __libc_memalign(size_t, size_t);
}

namespace {
std::atomic<long long> g_current{0}, g_peak{0};

void note_alloc(void* p) {
  if (!p) return;
  long long cur = g_current.fetch_add(static_cast<long long>(malloc_usable_size(p))) +
                  static_cast<long long>(malloc_usable_size(p));
  long long pk = g_peak.load();
  while (cur > pk && !g_peak.compare_exchange_weak(pk, cur)) {
  }
}
void note_free(void* p) {
  if (p) g_current.fetch_sub(static_cast<long long>(malloc_usable_size(p)));
}
}  // namespace

extern "C" {
void* malloc(size_t n) {
  void* p = __libc_malloc(n);
  note_alloc(p);
  return p;
}
void* calloc(size_t a, size_t b) {
  void* p = __libc_calloc(a, b);
  note_alloc(p);
  return p;
}
void* realloc(void* q, size_t n) {
  note_free(q);
  void* p = __libc_realloc(q, n);
  note_alloc(p);
  return p;
}
void free(void* p) {
  note_free(p);
  __libc_free(p);
}
void* memalign(size_t a, size_t n) {
  void* p = __libc_memalign(a, n);
  note_alloc(p);
  return p;
}
void* aligned_alloc(size_t a, size_t n) { return memalign(a, n); }
int posix_memalign(void** out, size_t a, size_t n) {
  *out = memalign(a, n);
  return *out ? 0 : ENOMEM;
}
}

using namespace nytune;

TEST_CASE("allocator hook sees Eigen allocations") {
  long long before = g_current.load();
  {
    Mat M(1000, 100);
    CHECK(g_current.load() - before >= 800000);
  }
  CHECK(g_current.load() == before);
}

TEST_CASE("peak memory of the PROP gradient at n=20000, m=500") {
  const Index n = 20000, m = 500, d = 4, t = 20;
  tu::Rng r(1);
  Dataset ds = tu::make_data(r, n, d);
  HyperParams hp = tu::make_hp(r, m, d, 1e-4);
  hp.Z = ds.X.topRows(m);
  ProbeSet pr = make_probes(n, t, ProbeKind::GAUSSIAN, 2);
  const double budget = 3.0 * static_cast<double>(n * m + m * m + n * t) * sizeof(double);

  for (bool ste : {false, true}) {
    GradOptions opt;
    opt.ste = ste;
    opt.probes = &pr;
    long long base = g_current.load();
    g_peak.store(base);
    GradResult g = grad_objective(ObjectiveId::PROP, ds, hp, opt);
    double peak = static_cast<double>(g_peak.load() - base);
    MESSAGE(std::string(ste ? "ste" : "exact") << " peak " << peak / 1e6 << " MB, budget " << budget / 1e6 << " MB");
    CHECK(g.grad.all_finite());
    CHECK(peak < budget);
  }
}
