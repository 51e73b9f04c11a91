#include "deqntk/parallel.hpp"

#include <cstdlib>
#include <string>

namespace deqntk {

int default_workers() {
    if (const char* env = std::getenv("DEQNTK_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace deqntk
