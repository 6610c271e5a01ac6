#include <cstdlib>
#include <cstring>

#include "sdfit/kernels.hpp"

namespace sdfit::kernels {

const Backend& active_backend() {
    static const Backend* chosen = [] {
        const char* req = std::getenv("SDFIT_KERNELS");
        const Backend* avx2 = avx2_backend();
        if (req && std::strcmp(req, "scalar") == 0) return &scalar_backend();
        if (req && std::strcmp(req, "avx2") == 0 && avx2) return avx2;
        return avx2 ? avx2 : &scalar_backend();
    }();
    return *chosen;
}

}  // namespace sdfit::kernels
