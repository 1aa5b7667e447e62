#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace agegan {

// Root of every error raised by the library. The CLI maps these to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define AGEGAN_DEFINE_ERROR(Name)      \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  };

AGEGAN_DEFINE_ERROR(ArgumentError)
AGEGAN_DEFINE_ERROR(IndexError)
AGEGAN_DEFINE_ERROR(DistributionError)
AGEGAN_DEFINE_ERROR(GeometryError)
AGEGAN_DEFINE_ERROR(IoError)
AGEGAN_DEFINE_ERROR(FormatError)
AGEGAN_DEFINE_ERROR(DegenerateMask)
AGEGAN_DEFINE_ERROR(SpecError)
AGEGAN_DEFINE_ERROR(SpecMismatchError)
AGEGAN_DEFINE_ERROR(DataError)
AGEGAN_DEFINE_ERROR(QualityError)

#undef AGEGAN_DEFINE_ERROR

// Non-finite value encountered. Training attaches the failing iteration.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, int64_t iteration = -1)
      : Error(iteration >= 0 ? what + " (iteration " + std::to_string(iteration) + ")" : what),
        iteration_(iteration) {}

  int64_t iteration() const { return iteration_; }

 private:
  int64_t iteration_;
};

}  // namespace agegan
