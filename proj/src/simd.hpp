#pragma once

// Hot loops are compiled for several ISA levels and picked at load time.
// Per-element results do not depend on the vector width because
// contraction into FMA is disabled project-wide.
#if defined(__GNUC__) && !defined(__clang__) && defined(__x86_64__) && defined(__linux__)
#define ZSD_SIMD_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#define ZSD_INLINE [[gnu::always_inline]] inline
#else
#define ZSD_SIMD_CLONES
#define ZSD_INLINE inline
#endif

// Helpers called from a cloned function must be inlined into it to be
// compiled for the clone's ISA.
