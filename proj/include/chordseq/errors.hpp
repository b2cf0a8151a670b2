#pragma once

#include <stdexcept>
#include <string>

namespace chordseq {

// Error families map onto process exit codes in the CLI:
// usage/config -> 1, data -> 2, internal invariant -> 3.
enum class ErrorFamily { Usage = 1, Data = 2, Internal = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorFamily family, const std::string& what)
      : std::runtime_error(what), family_(family) {}
  ErrorFamily family() const noexcept { return family_; }

private:
  ErrorFamily family_;
};

#define CHORDSEQ_DEFINE_ERROR(Name, Family)                                   \
  class Name : public Error {                                                 \
  public:                                                                     \
    explicit Name(const std::string& what)                                    \
        : Error(ErrorFamily::Family, std::string(#Name ": ") + what) {}       \
  }

// chord syntax
CHORDSEQ_DEFINE_ERROR(MalformedLabel, Data);
CHORDSEQ_DEFINE_ERROR(UnknownQuality, Data);
CHORDSEQ_DEFINE_ERROR(NotInAlphabet, Data);

// corpus
CHORDSEQ_DEFINE_ERROR(IoFailure, Data);
CHORDSEQ_DEFINE_ERROR(MalformedXlab, Data);
CHORDSEQ_DEFINE_ERROR(TrackTooShort, Data);
CHORDSEQ_DEFINE_ERROR(TooFewSongs, Data);
CHORDSEQ_DEFINE_ERROR(InvalidSpec, Usage);

// aggregation / numerics
CHORDSEQ_DEFINE_ERROR(OddLength, Internal);
CHORDSEQ_DEFINE_ERROR(DimensionMismatch, Internal);
CHORDSEQ_DEFINE_ERROR(NonOneHotTarget, Data);

// training / evaluation
CHORDSEQ_DEFINE_ERROR(EmptyDataset, Data);
CHORDSEQ_DEFINE_ERROR(Misaligned, Internal);
CHORDSEQ_DEFINE_ERROR(ZeroProbability, Internal);
CHORDSEQ_DEFINE_ERROR(AlphabetMismatch, Data);
CHORDSEQ_DEFINE_ERROR(InvalidConfig, Usage);

#undef CHORDSEQ_DEFINE_ERROR

}  // namespace chordseq
