#include "snapflow/runtime.hpp"

#include <cstdlib>
#include <thread>

#ifdef __linux__
#include <unistd.h>

#include <fstream>
#include <string>
#include <vector>
#endif

extern "C" void openblas_set_num_threads(int);

namespace snapflow {

namespace {

#ifdef __linux__
// OpenBLAS picks its kernels in a loader constructor, long before main, by
// reading cpuid and OPENBLAS_CORETYPE. Virtual machines often report a cpu
// model the dispatcher does not know and it silently falls back to a
// generations-old generic kernel (several times slower). When that can
// happen and the variable is unset, restart the process once with an
// explicit core type; the variable being set afterwards stops any loop.
void ensure_blas_core_type() {
  if (std::getenv("OPENBLAS_CORETYPE") != nullptr) return;
  const char* core = nullptr;
  if (__builtin_cpu_supports("avx512f"))
    core = "SKYLAKEX";
  else if (__builtin_cpu_supports("avx2"))
    core = "HASWELL";
  if (core == nullptr) return;
  setenv("OPENBLAS_CORETYPE", core, 1);

  std::ifstream cmdline("/proc/self/cmdline", std::ios::binary);
  if (!cmdline) return;
  std::string raw((std::istreambuf_iterator<char>(cmdline)),
                  std::istreambuf_iterator<char>());
  std::vector<char*> argv;
  size_t pos = 0;
  while (pos < raw.size()) {
    argv.push_back(raw.data() + pos);
    pos = raw.find('\0', pos);
    if (pos == std::string::npos) break;
    ++pos;
  }
  argv.push_back(nullptr);
  if (argv.size() > 1) execv("/proc/self/exe", argv.data());
  // exec failed; continue with whatever kernels we got
}
#else
void ensure_blas_core_type() {}
#endif

}  // namespace

void pin_blas_threads() {
  ensure_blas_core_type();
  openblas_set_num_threads(1);
}

int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace snapflow
