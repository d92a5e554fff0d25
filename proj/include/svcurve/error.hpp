#pragma once

#include <stdexcept>
#include <string>

namespace svcurve {

/// Invalid user input: parameters, contracts, files.
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical routine failed to reach its accuracy target.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A root or calibration problem has no admissible solution.
class NoSolutionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace svcurve
