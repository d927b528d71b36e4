#include "ircan/parallel.hpp"

#include <cstdlib>
#include <string>

#include "ircan/errors.hpp"

namespace ircan {

int resolve_threads(int requested) {
    if (const char* env = std::getenv("IRCAN_THREADS"); env && *env) {
        try {
            requested = std::stoi(env);
        } catch (const std::exception&) {
            throw ParameterError(std::string("IRCAN_THREADS is not an integer: ") + env);
        }
    }
    if (requested < 0) throw ParameterError("thread count must be >= 0");
    if (requested == 0) requested = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    return requested;
}

}  // namespace ircan
