#pragma once

#include <stdexcept>
#include <string>

namespace cspine {

/// Coarse error class, used by the CLI to pick an exit code.
enum class ErrorClass { Usage, Data, Runtime };

class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& what, ErrorClass cls)
        : std::runtime_error(name + ": " + what), name_(std::move(name)), cls_(cls) {}

    const std::string& name() const noexcept { return name_; }
    ErrorClass error_class() const noexcept { return cls_; }

private:
    std::string name_;
    ErrorClass cls_;
};

#define CSPINE_DEFINE_ERROR(Type, Class)                                    \
    class Type : public Error {                                             \
    public:                                                                 \
        explicit Type(const std::string& what) : Error(#Type, what, Class) {} \
    };

// numeric core / nn
CSPINE_DEFINE_ERROR(ShapeError, ErrorClass::Runtime)
CSPINE_DEFINE_ERROR(NondeterministicLoss, ErrorClass::Runtime)
CSPINE_DEFINE_ERROR(MissingGradient, ErrorClass::Runtime)
CSPINE_DEFINE_ERROR(ParamError, ErrorClass::Usage)
CSPINE_DEFINE_ERROR(EmptySequence, ErrorClass::Runtime)
CSPINE_DEFINE_ERROR(FormatError, ErrorClass::Data)
CSPINE_DEFINE_ERROR(CorruptCheckpoint, ErrorClass::Data)

// preprocessing
CSPINE_DEFINE_ERROR(DegenerateImage, ErrorClass::Data)
CSPINE_DEFINE_ERROR(EmptyForeground, ErrorClass::Data)
CSPINE_DEFINE_ERROR(BoxError, ErrorClass::Data)
CSPINE_DEFINE_ERROR(EmptyCase, ErrorClass::Data)

// data, pipeline, metrics
CSPINE_DEFINE_ERROR(StratificationError, ErrorClass::Data)
CSPINE_DEFINE_ERROR(DegenerateTestSet, ErrorClass::Data)
CSPINE_DEFINE_ERROR(DegenerateTraining, ErrorClass::Data)
CSPINE_DEFINE_ERROR(DegenerateMatrix, ErrorClass::Data)

// cli
CSPINE_DEFINE_ERROR(IoError, ErrorClass::Data)
CSPINE_DEFINE_ERROR(NotFound, ErrorClass::Data)
CSPINE_DEFINE_ERROR(ConfigError, ErrorClass::Usage)

#undef CSPINE_DEFINE_ERROR

}  // namespace cspine
