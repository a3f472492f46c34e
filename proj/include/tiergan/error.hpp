#pragma once

#include <stdexcept>
#include <string>

namespace tiergan {

// Base class for every error the engine raises.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not conform (messages name both shapes).
struct ShapeError : Error {
    using Error::Error;
};

// Convolution geometry yields a non-positive output size or inconsistent channels.
struct GeometryError : Error {
    using Error::Error;
};

// File-level failures: unreadable paths, short writes.
struct IoError : Error {
    using Error::Error;
};

// Malformed file contents: bad magic, version mismatch, truncation, digest mismatch.
struct FormatError : Error {
    using Error::Error;
};

// Key/value configuration problems: unknown keys, unparseable values.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite loss or gradient during training.
struct DivergedError : Error {
    using Error::Error;
};

// Cascade state machine violations: training a stage before its predecessor,
// generating from an untrained or diverged stage.
struct StateError : Error {
    using Error::Error;
};

} // namespace tiergan
