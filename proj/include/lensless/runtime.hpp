#pragma once

#if defined(__GLIBC__) || __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace lensless {

/// Keeps large freed buffers in the heap instead of returning them to the
/// kernel. Solver passes allocate and drop many multi-megabyte fields, and
/// fresh mmap'd pages cost a page fault each on first touch.
inline void tune_allocator() {
#if defined(M_MMAP_THRESHOLD) && defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

}  // namespace lensless
