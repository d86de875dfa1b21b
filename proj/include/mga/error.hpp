#pragma once

#include <stdexcept>
#include <string>

namespace mga {

// Shape/axis disagreements between tensors or layers.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated a documented precondition (bad config, out-of-range value).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem problems: missing paths, short reads, failed writes.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A file exists but its contents are not in the expected format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Illegal use of an object's lifecycle (e.g. double backward on one graph).
struct StateError : std::runtime_error {
    explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mga
