#pragma once

#include <stdexcept>
#include <string>

namespace protood {

/// Process exit codes shared by every command of the CLI.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 2,
  kShape = 3,  // shape and format problems
  kData = 4,
  kIo = 5,
};

/// Root of the library's error hierarchy. Each concrete error knows the exit
/// code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, ExitCode code)
      : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define PROTOOD_DEFINE_ERROR(Name, Code)                              \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(what, Code) {}     \
  };

PROTOOD_DEFINE_ERROR(ConfigError, ExitCode::kConfig)
PROTOOD_DEFINE_ERROR(InsufficientCalibration, ExitCode::kConfig)

PROTOOD_DEFINE_ERROR(FormatError, ExitCode::kShape)
PROTOOD_DEFINE_ERROR(UnsupportedDtype, ExitCode::kShape)
PROTOOD_DEFINE_ERROR(ShapeError, ExitCode::kShape)
PROTOOD_DEFINE_ERROR(ManifestError, ExitCode::kShape)
PROTOOD_DEFINE_ERROR(BankFormatError, ExitCode::kShape)

PROTOOD_DEFINE_ERROR(DataError, ExitCode::kData)
PROTOOD_DEFINE_ERROR(EmptyClassError, ExitCode::kData)
PROTOOD_DEFINE_ERROR(DegeneratePrototypeError, ExitCode::kData)
PROTOOD_DEFINE_ERROR(SingularCovariance, ExitCode::kData)

PROTOOD_DEFINE_ERROR(IoError, ExitCode::kIo)

#undef PROTOOD_DEFINE_ERROR

}  // namespace protood
