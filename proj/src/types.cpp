#include "csdn/types.hpp"

#include "csdn/errors.hpp"

namespace csdn {

std::string_view to_string(Modality m) {
  return m == Modality::kVisible ? "visible" : "infrared";
}

Modality parse_modality(std::string_view s) {
  if (s == "visible" || s == "vis" || s == "v") return Modality::kVisible;
  if (s == "infrared" || s == "ir" || s == "r") return Modality::kInfrared;
  throw InputError("unknown modality '" + std::string(s) + "'");
}

}  // namespace csdn
