#pragma once

namespace ccot {

// Tool version written into every artifact.
const char* tool_version();

}  // namespace ccot
