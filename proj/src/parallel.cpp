#include "tempologic/parallel.hpp"

#include <cstdlib>
#include <string>

namespace tempologic {

int default_workers() {
  const char* env = std::getenv("TEMPOLOGIC_WORKERS");
  if (!env || !*env) return 1;
  try {
    return std::max(1, std::stoi(env));
  } catch (const std::exception&) {
    return 1;
  }
}

}  // namespace tempologic
