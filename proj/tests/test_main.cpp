#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include "snapflow/runtime.hpp"

int main(int argc, char** argv) {
  snapflow::pin_blas_threads();
  return doctest::Context(argc, argv).run();
}
