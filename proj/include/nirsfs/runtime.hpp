#pragma once
// Process-level tuning for executables built on the library.

#include <malloc.h>

namespace nirsfs {

/// Keeps large tensor buffers on the heap instead of mmap/munmap per
/// allocation; training allocates and frees many multi-megabyte blocks.
inline void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace nirsfs
