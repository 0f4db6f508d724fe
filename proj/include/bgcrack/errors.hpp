#pragma once

#include <stdexcept>
#include <string>

namespace bgcrack {

// Input geometry that the network cannot process (e.g. H or W not a multiple of 32).
class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Invalid model, loss or training configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Missing or unreadable dataset files.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bgcrack
