#pragma once

#include <iosfwd>

namespace pbf {

/// Process exit codes of the pbf tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitConfig = 3,     // ConfigError, ShapeError, UnsupportedError
  kExitIo = 4,         // IoError, FormatError
  kExitNumeric = 5,    // DomainError, SingularityError, LabelExtractionError, DivergenceError
  kExitGradcheck = 6,  // gradcheck above threshold
};

/// Entry point for the pbf command line. Errors are reported on `err` as a
/// single line "pbf: error[<category>]: <message>".
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pbf
