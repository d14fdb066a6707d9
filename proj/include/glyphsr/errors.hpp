#pragma once

#include <stdexcept>
#include <string>

namespace glyphsr {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define GLYPHSR_DEFINE_ERROR(Name)            \
    struct Name : Error {                     \
        using Error::Error;                   \
    }

GLYPHSR_DEFINE_ERROR(ShapeMismatch);
GLYPHSR_DEFINE_ERROR(DegenerateTriangle);
GLYPHSR_DEFINE_ERROR(SingularTransform);
GLYPHSR_DEFINE_ERROR(GapBetweenTiles);
GLYPHSR_DEFINE_ERROR(InvalidRange);
GLYPHSR_DEFINE_ERROR(NonFiniteActivation);
GLYPHSR_DEFINE_ERROR(NonFiniteLoss);
GLYPHSR_DEFINE_ERROR(UnknownGlyph);
GLYPHSR_DEFINE_ERROR(IOFailure);
GLYPHSR_DEFINE_ERROR(EmptyEvalSet);
GLYPHSR_DEFINE_ERROR(ConfigError);
GLYPHSR_DEFINE_ERROR(CheckpointMismatch);

#undef GLYPHSR_DEFINE_ERROR

}  // namespace glyphsr
