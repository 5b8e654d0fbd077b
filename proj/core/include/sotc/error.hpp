#pragma once

#include <stdexcept>
#include <string>

namespace sotc {

// Single exception type for the whole library; the kind discriminates
// failure classes so callers (and the CLI exit-code mapping) can react
// without string matching.
class Error : public std::runtime_error {
 public:
  enum class Kind {
    kShape,        // dimension mismatch between operands
    kDomain,       // argument outside its admissible range
    kConvergence,  // iterative method hit its cap
    kIo,           // unreadable / unwritable path
    kBadMagic,     // file does not start with the expected magic
    kVersion,      // unsupported format version
    kTruncated,    // file shorter than its own length fields claim
    kChecksum,     // payload CRC mismatch
    kContract,     // protocol / freeze contract violation
  };

  Error(Kind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sotc
