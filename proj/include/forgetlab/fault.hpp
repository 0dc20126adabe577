#pragma once

#include <cstdlib>
#include <string_view>

namespace forgetlab::fault {

// Seeded faults for negative-control runs, selected with FORGETLAB_MUTATE=<name>.
inline bool active(std::string_view name) {
  const char* v = std::getenv("FORGETLAB_MUTATE");
  return v != nullptr && name == v;
}

inline bool sft_logit_sign() { return active("sft_logit_sign"); }

}  // namespace forgetlab::fault
