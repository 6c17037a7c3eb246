#pragma once

// Allocation and FLOP accounting used by the complexity profiler.
//
// Every tensor buffer goes through TrackedAllocator, which reports to a
// process-wide byte counter. A MemoryScope marks a measurement window: on
// entry the peak watermark is reset to the current level, and
// tracked_alloc_stats() reports current/peak relative to the scope start.
// Scopes nest; the outer peak is restored as max(outer, inner) on exit.
//
// FlopScope does the same for the nominal FLOP count that kernels report.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <new>

namespace ocrseg {

struct AllocStats {
  std::int64_t current_bytes = 0;
  std::int64_t peak_bytes = 0;
};

namespace detail {
void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;
void note_flops(std::int64_t flops) noexcept;
}  // namespace detail

class MemoryScope {
 public:
  MemoryScope();
  ~MemoryScope();
  MemoryScope(const MemoryScope&) = delete;
  MemoryScope& operator=(const MemoryScope&) = delete;

 private:
  std::int64_t saved_baseline_;
  std::int64_t saved_peak_;
  bool saved_active_;
};

// Throws StateError when no MemoryScope is active.
AllocStats tracked_alloc_stats();

class FlopScope {
 public:
  FlopScope();
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

  std::int64_t flops() const;

 private:
  std::int64_t start_;
  bool saved_active_;
};

template <typename T>
struct TrackedAllocator {
  using value_type = T;

  TrackedAllocator() noexcept = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    T* p = static_cast<T*>(::operator new(n * sizeof(T)));
    detail::note_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    detail::note_free(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackedAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace ocrseg
