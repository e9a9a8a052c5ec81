#ifndef MCRNET_ERRORS_HPP
#define MCRNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mcrnet {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MCRNET_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                            \
    explicit Name(const std::string& msg) : Error(#Name ": " + msg) {} \
  }

// numeric kernels
MCRNET_DEFINE_ERROR(NotPositiveDefinite);
MCRNET_DEFINE_ERROR(NoConvergence);
MCRNET_DEFINE_ERROR(ShapeMismatch);

// objective / partitions
MCRNET_DEFINE_ERROR(EmptyClass);
MCRNET_DEFINE_ERROR(MissingStat);
MCRNET_DEFINE_ERROR(PlanMismatch);
MCRNET_DEFINE_ERROR(ClassMismatch);

// encoder
MCRNET_DEFINE_ERROR(BadArch);
MCRNET_DEFINE_ERROR(ArchMismatch);

// network
MCRNET_DEFINE_ERROR(Unconnectable);
MCRNET_DEFINE_ERROR(UnknownRecipient);

// trainers
MCRNET_DEFINE_ERROR(AssumptionViolated);

// clustering
MCRNET_DEFINE_ERROR(UncoverableLabel);

// data
MCRNET_DEFINE_ERROR(InsufficientSamples);
MCRNET_DEFINE_ERROR(BadDims);
MCRNET_DEFINE_ERROR(BadMagic);
MCRNET_DEFINE_ERROR(TypeUnsupported);
MCRNET_DEFINE_ERROR(TruncatedPayload);

// evaluation
MCRNET_DEFINE_ERROR(ZeroVariance);

// config / io
MCRNET_DEFINE_ERROR(ParseError);
MCRNET_DEFINE_ERROR(ValidationError);
MCRNET_DEFINE_ERROR(IoError);

#undef MCRNET_DEFINE_ERROR

}  // namespace mcrnet

#endif
