#include "pfadseg/version.hpp"

namespace pfadseg {

const char* version() { return PFADSEG_VERSION; }

}  // namespace pfadseg
