#pragma once

#include <stdexcept>
#include <string>

namespace vc4d {

// Error category used by the CLI to map exceptions onto exit codes:
// data errors exit 2, numerical errors exit 3.
enum class ErrorCategory { data, numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}
    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

#define VC4D_DEFINE_ERROR(NAME, CATEGORY)                       \
    class NAME : public Error {                                 \
    public:                                                     \
        explicit NAME(const std::string& message)               \
            : Error(ErrorCategory::CATEGORY, message) {}        \
    }

VC4D_DEFINE_ERROR(ParseError, data);
VC4D_DEFINE_ERROR(FaceArityError, data);
VC4D_DEFINE_ERROR(IndexError, data);
VC4D_DEFINE_ERROR(FormatError, data);
VC4D_DEFINE_ERROR(ManifestError, data);
VC4D_DEFINE_ERROR(TopologyError, data);
VC4D_DEFINE_ERROR(DegenerateFeatureError, data);
VC4D_DEFINE_ERROR(ShapeError, data);
VC4D_DEFINE_ERROR(BatchSizeError, data);
VC4D_DEFINE_ERROR(ConfigError, data);
VC4D_DEFINE_ERROR(ConditioningError, data);
VC4D_DEFINE_ERROR(SplitError, data);
VC4D_DEFINE_ERROR(FingerprintError, data);
VC4D_DEFINE_ERROR(ContainerError, data);
VC4D_DEFINE_ERROR(IoError, data);
VC4D_DEFINE_ERROR(NumericalError, numerical);

#undef VC4D_DEFINE_ERROR

}  // namespace vc4d
