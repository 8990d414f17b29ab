#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace brickseq {

// Base of every domain failure raised by the library. The CLI maps these to
// exit code 1 and the service maps them to HTTP status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BRICKSEQ_ERROR(Name)                \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

BRICKSEQ_ERROR(UnknownPart);
BRICKSEQ_ERROR(InvalidModel);
BRICKSEQ_ERROR(NoValidOrdering);
BRICKSEQ_ERROR(InvalidClass);
BRICKSEQ_ERROR(MalformedStream);
BRICKSEQ_ERROR(ConfigMismatch);
BRICKSEQ_ERROR(EmptyMask);
BRICKSEQ_ERROR(SequenceTooLong);
BRICKSEQ_ERROR(NoValidCandidate);
BRICKSEQ_ERROR(InvalidChoice);
BRICKSEQ_ERROR(EmptyCorpus);
BRICKSEQ_ERROR(Undefined);
BRICKSEQ_ERROR(GenerationFailed);
BRICKSEQ_ERROR(CheckpointError);

#undef BRICKSEQ_ERROR

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace brickseq
