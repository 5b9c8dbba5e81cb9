#pragma once

#include <stdexcept>
#include <string>

namespace bsbm {

// Shape or dimension mismatch between inputs. CLI exit code 3.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or inconsistent files / datasets. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value produced where the contract requires finite math.
// CLI exit code 4.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace bsbm
