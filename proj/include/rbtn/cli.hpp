#pragma once

#include <iosfwd>

namespace rbtn {

// Entry point of the rbtn tool. Returns 0 on success, 2 on usage errors and 1
// on any other failure; failures print one "error: <code>: <message>" line.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace rbtn
