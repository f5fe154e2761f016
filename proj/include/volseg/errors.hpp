#pragma once

#include <stdexcept>
#include <string>

namespace volseg {

// Error taxonomy maps onto CLI exit codes: config=2, data=3, divergence=4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainDivergedError : std::runtime_error {
    explicit TrainDivergedError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace volseg
