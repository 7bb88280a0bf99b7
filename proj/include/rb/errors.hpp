#pragma once

#include <stdexcept>
#include <string>

namespace rb {

// Base class for every error raised by the library. Each module derives the
// specific conditions its contract names, so callers can catch narrowly.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define RB_DEFINE_ERROR(Name)                                    \
    class Name : public Error {                                  \
    public:                                                      \
        explicit Name(const std::string& msg) : Error(msg) {}    \
    }

// imaging
RB_DEFINE_ERROR(MalformedHeader);
RB_DEFINE_ERROR(UnsupportedMaxval);
RB_DEFINE_ERROR(TruncatedPayload);
RB_DEFINE_ERROR(DimMismatch);
RB_DEFINE_ERROR(ZeroDepth);
RB_DEFINE_ERROR(IoError);
RB_DEFINE_ERROR(MalformedMaskFile);
RB_DEFINE_ERROR(MalformedVolumeFile);

// lpdmf
RB_DEFINE_ERROR(EmptySet);
RB_DEFINE_ERROR(BadFilterParams);

// patcher
RB_DEFINE_ERROR(MalformedPatchFile);

// micronet
RB_DEFINE_ERROR(ShapeMismatch);
RB_DEFINE_ERROR(OddSpatialDim);
RB_DEFINE_ERROR(ShapeUnderflow);
RB_DEFINE_ERROR(UnlabeledPatch);
RB_DEFINE_ERROR(SingleClassDataset);
RB_DEFINE_ERROR(MalformedModelFile);

// aggregation
RB_DEFINE_ERROR(EmptyVotes);
RB_DEFINE_ERROR(DegenerateDenominator);

// metrics
RB_DEFINE_ERROR(UndefinedMetric);
RB_DEFINE_ERROR(SingleClassTruth);

// grading
RB_DEFINE_ERROR(InconsistentFindings);

// phantom
RB_DEFINE_ERROR(UnplaceableTumor);
RB_DEFINE_ERROR(InsufficientClassVoxels);

// config
RB_DEFINE_ERROR(UnknownKey);
RB_DEFINE_ERROR(TypeError);

#undef RB_DEFINE_ERROR

}  // namespace rb
