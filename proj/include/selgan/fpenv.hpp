#pragma once

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#define SELGAN_HAVE_MXCSR 1
#endif

namespace selgan {

/// Flushes denormal results and operands to zero on this thread while alive.
///
/// The channel-attention softmax saturates on large Gram entries and would
/// otherwise push subnormal floats through every following product, which
/// costs an order of magnitude in throughput.
class FlushDenormals {
 public:
  FlushDenormals() {
#ifdef SELGAN_HAVE_MXCSR
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | kFlushToZero | kDenormalsAreZero);
#endif
  }
  ~FlushDenormals() {
#ifdef SELGAN_HAVE_MXCSR
    _mm_setcsr(saved_);
#endif
  }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
#ifdef SELGAN_HAVE_MXCSR
  static constexpr unsigned kFlushToZero = 0x8000;
  static constexpr unsigned kDenormalsAreZero = 0x0040;
  unsigned saved_ = 0;
#endif
};

}  // namespace selgan
