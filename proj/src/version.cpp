#include "ccot/version.hpp"

namespace ccot {

const char* tool_version() { return CCOT_VERSION; }

}  // namespace ccot
