#pragma once

#include <ostream>

namespace transfusion::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,   // bad flags, config file contents, shapes that do not fit
  kIo = 3,       // missing or unreadable files, corrupt formats
  kNumeric = 4,  // NaN/Inf during training or evaluation
  kCheck = 5,    // a self-check (gradcheck) did not pass
};

// Entry point behind the `tfcount` binary; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace transfusion::cli
