#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "splitfed/cli.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Large tensor buffers churn through malloc's mmap path otherwise.
    mallopt(M_MMAP_MAX, 0);
#endif
    std::vector<std::string> args(argv + 1, argv + argc);
    return splitfed::run_cli(args);
}
