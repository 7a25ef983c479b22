#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
#endif
    doctest::Context ctx(argc, argv);
    ctx.setOption("duration", true);
    return ctx.run();
}
