#include "dasd/rng.hpp"

#include <sstream>
#include <stdexcept>

namespace dasd {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& text) {
  std::istringstream in(text);
  std::mt19937_64 engine;
  in >> engine;
  if (in.fail()) throw std::invalid_argument("malformed RNG state");
  engine_ = engine;
}

}  // namespace dasd
