#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace guidednet {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define GUIDEDNET_ERROR(Name)                  \
    class Name : public Error {                \
    public:                                    \
        using Error::Error;                    \
    }

// imgproc
GUIDEDNET_ERROR(InvalidImage);
GUIDEDNET_ERROR(NoFovFound);
GUIDEDNET_ERROR(EmptyCrop);
GUIDEDNET_ERROR(ImageLoadError);
GUIDEDNET_ERROR(ImageWriteError);

// priors
GUIDEDNET_ERROR(InvalidKernelSpec);

// nnet
GUIDEDNET_ERROR(ShapeMismatch);
GUIDEDNET_ERROR(DegenerateBatch);
GUIDEDNET_ERROR(LabelOutOfRange);
GUIDEDNET_ERROR(OddSpatialDim);
GUIDEDNET_ERROR(InvalidConfig);

// data
GUIDEDNET_ERROR(MissingFile);
GUIDEDNET_ERROR(TooFewSamples);

// evaluate
GUIDEDNET_ERROR(LengthMismatch);
GUIDEDNET_ERROR(EmptyMatrix);
GUIDEDNET_ERROR(UntrainedModel);

// train
GUIDEDNET_ERROR(NonFiniteLoss);
GUIDEDNET_ERROR(CorruptCheckpoint);
GUIDEDNET_ERROR(FingerprintMismatch);

#undef GUIDEDNET_ERROR

/// Manifest parse failure; carries the 1-based offending line.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace guidednet
