#pragma once

#include <ostream>

namespace ocrseg {

// Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ocrseg
