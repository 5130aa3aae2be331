#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eovae {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EOVAE_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    using Error::Error;                       \
  }

EOVAE_DEFINE_ERROR(ShapeError);
EOVAE_DEFINE_ERROR(StateError);
EOVAE_DEFINE_ERROR(DomainError);
EOVAE_DEFINE_ERROR(EmptyCorpusError);
EOVAE_DEFINE_ERROR(UnsupportedModalityError);
EOVAE_DEFINE_ERROR(ConsistencyError);
EOVAE_DEFINE_ERROR(ManifestError);
EOVAE_DEFINE_ERROR(CorruptContainerError);
EOVAE_DEFINE_ERROR(DimensionError);
EOVAE_DEFINE_ERROR(IoError);
EOVAE_DEFINE_ERROR(MissingBandError);
EOVAE_DEFINE_ERROR(ConfigError);
EOVAE_DEFINE_ERROR(UndefinedPeakError);
EOVAE_DEFINE_ERROR(EmptyMetricError);
EOVAE_DEFINE_ERROR(SamplerDivergenceError);
EOVAE_DEFINE_ERROR(WeightOverflowError);

#undef EOVAE_DEFINE_ERROR

/// Raised when a training loss becomes non-finite. Carries the last
/// checkpoint that is known to be good (may be empty).
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_good_checkpoint)
      : Error(what), last_good_checkpoint_(std::move(last_good_checkpoint)) {}

  const std::string& last_good_checkpoint() const noexcept { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

/// Collects non-fatal warnings (std floors, scale reductions, ...).
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
  bool empty() const noexcept { return warnings.empty(); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) diag->warn(std::move(message));
}

}  // namespace eovae
