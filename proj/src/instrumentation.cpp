#include "ocrseg/instrumentation.hpp"

#include <algorithm>
#include <atomic>

#include "ocrseg/errors.hpp"

namespace ocrseg {

namespace {

std::atomic<std::int64_t> g_current{0};
std::atomic<std::int64_t> g_peak{0};
std::int64_t g_baseline = 0;
bool g_memory_active = false;

std::atomic<std::int64_t> g_flops{0};
bool g_flops_active = false;

void raise_peak(std::int64_t value) noexcept {
  std::int64_t seen = g_peak.load(std::memory_order_relaxed);
  while (value > seen && !g_peak.compare_exchange_weak(seen, value, std::memory_order_relaxed)) {
  }
}

}  // namespace

namespace detail {

void note_alloc(std::size_t bytes) noexcept {
  const auto now = g_current.fetch_add(static_cast<std::int64_t>(bytes), std::memory_order_relaxed) +
                   static_cast<std::int64_t>(bytes);
  raise_peak(now);
}

void note_free(std::size_t bytes) noexcept {
  g_current.fetch_sub(static_cast<std::int64_t>(bytes), std::memory_order_relaxed);
}

void note_flops(std::int64_t flops) noexcept {
  if (g_flops_active) g_flops.fetch_add(flops, std::memory_order_relaxed);
}

}  // namespace detail

MemoryScope::MemoryScope()
    : saved_baseline_(g_baseline), saved_peak_(g_peak.load()), saved_active_(g_memory_active) {
  g_baseline = g_current.load();
  g_peak.store(g_baseline);
  g_memory_active = true;
}

MemoryScope::~MemoryScope() {
  const auto inner_peak = g_peak.load();
  g_baseline = saved_baseline_;
  g_peak.store(std::max(saved_peak_, inner_peak));
  g_memory_active = saved_active_;
}

AllocStats tracked_alloc_stats() {
  if (!g_memory_active) throw StateError("allocation tracking is not enabled (no active MemoryScope)");
  AllocStats s;
  s.current_bytes = std::max<std::int64_t>(0, g_current.load() - g_baseline);
  s.peak_bytes = std::max<std::int64_t>(0, g_peak.load() - g_baseline);
  return s;
}

FlopScope::FlopScope() : start_(g_flops.load()), saved_active_(g_flops_active) { g_flops_active = true; }

FlopScope::~FlopScope() { g_flops_active = saved_active_; }

std::int64_t FlopScope::flops() const { return g_flops.load() - start_; }

}  // namespace ocrseg
